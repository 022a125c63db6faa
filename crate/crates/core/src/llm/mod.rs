//! Model providers.
//!
//! The session loop talks to a [`ModelProvider`] and never knows whether the
//! turns come from a live chat-completions endpoint ([`OpenAiCompatible`]),
//! a recording wrapper ([`Recorder`]) or a recorded file ([`ReplayProvider`]).

mod fingerprint;
mod openai;
mod replay;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::session::Message;

pub use fingerprint::{canonical_json, fingerprint};
pub use openai::{
    Backoff, HttpResponse, HttpTransport, LiveConfig, OpenAiCompatible, ReqwestTransport,
    SseAggregator, TransportError,
};
pub use replay::{read_recording, Recorder, RecordedExchange, ReplayProvider};

/// A tool invocation requested by the model.
///
/// `arguments` is the raw JSON text as produced by the model; it is parsed
/// only when the call is dispatched, so malformed payloads reach the tool
/// layer intact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

/// A tool declaration sent to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn add(&mut self, other: TokenUsage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// One fully aggregated assistant turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTurn {
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

/// Everything a provider needs to produce the next turn.
#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub history: &'a [Message],
    pub schemas: &'a [ToolSchema],
    pub model: &'a str,
}

impl CompletionRequest<'_> {
    pub fn fingerprint(&self) -> String {
        fingerprint(self.history, self.schemas, self.model)
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model endpoint failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("model endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not decode model response: {0}")]
    Decode(String),
    #[error("replay diverged at exchange {index}: expected fingerprint {expected}, got {actual}")]
    ReplayDivergence {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("replay exhausted after {0} exchange(s)")]
    ReplayExhausted(usize),
    #[error("recording I/O failed for {path}: {source}")]
    Recording {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ProviderError {
    /// Errors caused by local I/O rather than the model endpoint.
    pub fn is_local_io(&self) -> bool {
        matches!(self, ProviderError::Recording { .. })
    }
}

/// The contract shared by live and replay providers.
pub trait ModelProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError>;

    /// Non-fatal conditions to surface in the session outcome, such as unused
    /// replay entries.
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

impl<P: ModelProvider + ?Sized> ModelProvider for Arc<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        (**self).complete(request)
    }

    fn warnings(&self) -> Vec<String> {
        (**self).warnings()
    }
}

impl<P: ModelProvider + ?Sized> ModelProvider for Box<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        (**self).complete(request)
    }

    fn warnings(&self) -> Vec<String> {
        (**self).warnings()
    }
}

/// How the session obtains model turns.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProviderMode {
    #[default]
    Live,
    Record(PathBuf),
    Replay(PathBuf),
}

/// Builds the provider selected by `mode`.
///
/// Replay never touches `transport`; live and record modes send every
/// request through it.
pub fn build_provider(
    mode: &ProviderMode,
    live: LiveConfig,
    transport: Arc<dyn HttpTransport>,
) -> Result<Box<dyn ModelProvider>, ProviderError> {
    match mode {
        ProviderMode::Replay(path) => Ok(Box::new(ReplayProvider::open(path)?)),
        ProviderMode::Live => Ok(Box::new(OpenAiCompatible::new(live, transport)?)),
        ProviderMode::Record(path) => {
            let inner = OpenAiCompatible::new(live, transport)?;
            Ok(Box::new(Recorder::create(inner, path)?))
        }
    }
}
