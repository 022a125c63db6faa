//! The reason/act loop.
//!
//! Each iteration sends the whole history to the provider, appends the
//! returned assistant turn, and dispatches its tool calls in order, feeding
//! every result back as a tool-result message. A turn without tool calls
//! ends the session.

mod history;
pub mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use crate::kernel::CodeExecutor;
use crate::llm::{CompletionRequest, ModelProvider, ModelTurn, ProviderMode, TokenUsage, ToolCall};
use crate::prompt::{self, PromptError};
use crate::tools::{Sandbox, ToolResult, Toolkit, DEFAULT_TRUNCATION_LIMIT};

pub use history::{History, HistoryError, Message, Role};
pub use transcript::{
    comparison_form, persist_transcript, read_transcript, EventKind, TranscriptEvent,
    TranscriptWriter,
};

pub const DEFAULT_MODEL: &str = "anthropic/claude-sonnet-4";
pub const DEFAULT_MAX_ITERATIONS: u32 = 50;
pub const DEFAULT_TASK_FILE: &str = "task.md";

/// Directory inside the workdir that holds transcripts unless configured
/// otherwise.
pub const LOG_DIR: &str = ".coder";

const NO_FINAL_TEXT: &str = "(the agent finished without a final message)";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub workdir: PathBuf,
    pub project_prompt: Option<PathBuf>,
    /// Inline task text; when absent the task is read from `task_file`.
    pub task: Option<String>,
    pub task_file: String,
    /// Replaces the shipped system prompt.
    pub system_prompt: Option<String>,
    pub model: String,
    pub packages: Vec<String>,
    pub max_iterations: u32,
    pub provider_mode: ProviderMode,
    pub truncation_limit: usize,
    /// Defaults to `<workdir>/.coder/transcript-<timestamp>.jsonl`.
    pub transcript_path: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            project_prompt: None,
            task: None,
            task_file: DEFAULT_TASK_FILE.to_string(),
            system_prompt: None,
            model: DEFAULT_MODEL.to_string(),
            packages: Vec::new(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            provider_mode: ProviderMode::Live,
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
            transcript_path: None,
        }
    }

    /// Checks the invariants and returns the canonical working directory.
    pub fn validate(&self) -> Result<PathBuf, SessionError> {
        if self.max_iterations == 0 {
            return Err(SessionError::Config("max iterations must be at least 1".into()));
        }
        if self.truncation_limit == 0 {
            return Err(SessionError::Config("truncation limit must be at least 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(SessionError::Config("model identifier is empty".into()));
        }
        let meta = std::fs::metadata(&self.workdir).map_err(|e| {
            SessionError::Config(format!("working directory {}: {e}", self.workdir.display()))
        })?;
        if !meta.is_dir() {
            return Err(SessionError::Config(format!(
                "working directory {} is not a directory",
                self.workdir.display()
            )));
        }
        self.workdir.canonicalize().map_err(|e| {
            SessionError::Config(format!("working directory {}: {e}", self.workdir.display()))
        })
    }

    fn transcript_path_in(&self, workdir: &Path) -> PathBuf {
        self.transcript_path.clone().unwrap_or_else(|| {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ");
            workdir.join(LOG_DIR).join(format!("transcript-{stamp}.jsonl"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Completed,
    IterationLimit,
    ProviderError,
    Aborted,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Completed => "completed",
            SessionStatus::IterationLimit => "iteration-limit",
            SessionStatus::ProviderError => "provider-error",
            SessionStatus::Aborted => "aborted",
        })
    }
}

/// Token totals and per-tool call counts. Tokens are stored unscaled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStats {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub tool_calls: BTreeMap<String, u64>,
}

impl UsageStats {
    pub fn add_usage(&mut self, usage: TokenUsage) {
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
    }

    pub fn count_call(&mut self, tool: &str) {
        *self.tool_calls.entry(tool.to_string()).or_default() += 1;
    }

    pub fn calls(&self, tool: &str) -> u64 {
        self.tool_calls.get(tool).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> u64 {
        self.tool_calls.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub status: SessionStatus,
    pub final_text: String,
    pub usage: UsageStats,
    pub transcript_path: PathBuf,
    /// Provider round-trips made.
    pub iterations: u32,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Set for provider-error and aborted outcomes.
    #[serde(default)]
    pub error: Option<String>,
}

/// Failures detected before the first model call.
#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Appends `turn` and one tool-result message per call, dispatching the
/// calls in order. Tool failures come back as error results, never as
/// `Err`; the only error is a malformed history.
///
/// `observe` sees each call and its result right after dispatch.
pub fn step(
    history: &mut History,
    turn: &ModelTurn,
    toolkit: &mut Toolkit,
    mut observe: impl FnMut(&ToolCall, &ToolResult),
) -> Result<Vec<ToolResult>, HistoryError> {
    history.push(Message::from(turn))?;
    let mut results = Vec::with_capacity(turn.tool_calls.len());
    for call in &turn.tool_calls {
        let result = toolkit.dispatch(call);
        history.push(Message::tool_result(call.id.clone(), result.payload.clone()))?;
        observe(call, &result);
        results.push(result);
    }
    Ok(results)
}

/// Runs one session to completion.
///
/// `executor` backs the code-execution tool; without one, calls to it
/// return a kernel-unavailable error to the model.
pub fn run_session(
    config: &SessionConfig,
    provider: &dyn ModelProvider,
    executor: Option<Box<dyn CodeExecutor>>,
) -> Result<SessionOutcome, SessionError> {
    let workdir = config.validate()?;
    let bundle = prompt::load_bundle(config)?;
    let sandbox = Sandbox::new(&workdir).map_err(|e| SessionError::Config(e.to_string()))?;
    let mut toolkit = Toolkit::new(sandbox).with_truncation_limit(config.truncation_limit);
    if let Some(executor) = executor {
        toolkit = toolkit.with_executor(executor);
    }
    let schemas = toolkit.schemas();
    let mut history = History::from_messages(prompt::compose(&bundle))
        .map_err(|e| SessionError::Config(e.to_string()))?;

    let transcript_path = config.transcript_path_in(&workdir);
    let mut outcome = SessionOutcome {
        status: SessionStatus::Aborted,
        final_text: String::new(),
        usage: UsageStats::default(),
        transcript_path: transcript_path.clone(),
        iterations: 0,
        warnings: Vec::new(),
        error: None,
    };
    let mut transcript = match TranscriptWriter::create(&transcript_path) {
        Ok(w) => w,
        Err(e) => {
            outcome.error = Some(format!("cannot create transcript {}: {e}", transcript_path.display()));
            return Ok(outcome);
        }
    };
    info!(workdir = %workdir.display(), model = %config.model, "session started");

    let mut last_text = String::new();
    loop {
        if outcome.iterations >= config.max_iterations {
            outcome.status = SessionStatus::IterationLimit;
            outcome.final_text = last_text.clone();
            break;
        }
        let request = CompletionRequest {
            history: history.messages(),
            schemas: &schemas,
            model: &config.model,
        };
        let turn = match provider.complete(&request) {
            Ok(turn) => turn,
            Err(e) => {
                warn!(error = %e, "provider failed");
                outcome.status = if e.is_local_io() {
                    SessionStatus::Aborted
                } else {
                    SessionStatus::ProviderError
                };
                outcome.error = Some(e.to_string());
                outcome.final_text = last_text.clone();
                break;
            }
        };
        outcome.iterations += 1;
        outcome.usage.add_usage(turn.usage);
        transcript.model_turn(outcome.iterations, &turn);
        if !turn.text.trim().is_empty() {
            last_text = turn.text.clone();
        }

        let done = turn.tool_calls.is_empty();
        let usage = &mut outcome.usage;
        let stepped = step(&mut history, &turn, &mut toolkit, |call, result| {
            usage.count_call(&call.name);
            transcript.tool_call(call);
            transcript.tool_result(result);
        });
        if let Err(e) = stepped {
            outcome.error = Some(e.to_string());
            break;
        }
        if let Some(e) = transcript.error() {
            outcome.error = Some(format!("transcript write failed: {e}"));
            break;
        }
        if done {
            outcome.status = SessionStatus::Completed;
            outcome.final_text = if last_text.is_empty() {
                NO_FINAL_TEXT.to_string()
            } else {
                last_text.clone()
            };
            break;
        }
    }

    outcome.warnings = provider.warnings();
    for w in &outcome.warnings {
        warn!("{w}");
    }
    transcript.record(
        EventKind::Outcome,
        json!({
            "status": outcome.status,
            "final_text": outcome.final_text,
            "iterations": outcome.iterations,
            "tool_calls": outcome.usage.tool_calls,
            "warnings": outcome.warnings,
            "error": outcome.error,
        }),
        Some(TokenUsage {
            input_tokens: outcome.usage.input_tokens,
            output_tokens: outcome.usage.output_tokens,
        }),
    );
    if let Err(e) = transcript.flush() {
        outcome.status = SessionStatus::Aborted;
        outcome.error = Some(format!("transcript write failed: {e}"));
    }
    info!(status = %outcome.status, iterations = outcome.iterations, "session finished");
    Ok(outcome)
}
