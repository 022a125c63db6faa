#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;

use coder_core::kernel::{
    EnvWrapper, ExecutionContext, KernelExecutor, KernelManager, LaunchSpec,
};
use coder_core::llm::{
    CompletionRequest, HttpResponse, HttpTransport, ModelProvider, ModelTurn, ProviderError,
    TokenUsage, ToolCall, TransportError,
};
use coder_core::session::{run_session, SessionConfig, SessionOutcome};

pub const MOCK_KERNEL: &str = env!("CARGO_BIN_EXE_mock-kernel");

pub fn mock_spec() -> LaunchSpec {
    mock_spec_with(&[])
}

pub fn mock_spec_with(extra: &[&str]) -> LaunchSpec {
    let mut kernel_command = vec![MOCK_KERNEL.to_string(), "-f".into(), "{connection_file}".into()];
    kernel_command.extend(extra.iter().map(|s| s.to_string()));
    LaunchSpec {
        kernel_command,
        // `env NAME=1 ... kernel` stands in for an environment manager.
        env_wrapper: Some(EnvWrapper {
            prefix: vec!["env".into()],
            per_package: vec!["CODER_TEST_PKG_{package}=1".into()],
        }),
        kernel_name: "mock".into(),
        launch_timeout: Duration::from_secs(10),
        execute_timeout: Duration::from_secs(10),
        shutdown_grace: Duration::from_millis(500),
    }
}

/// Serves a fixed list of turns in order, whatever the request.
pub struct Scripted {
    turns: Mutex<Vec<ModelTurn>>,
    pub calls: AtomicUsize,
}

impl Scripted {
    pub fn new(turns: Vec<ModelTurn>) -> Self {
        let mut turns = turns;
        turns.reverse();
        Self {
            turns: Mutex::new(turns),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ModelProvider for Scripted {
    fn complete(&self, _request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.turns.lock().unwrap().pop().ok_or(ProviderError::Transport {
            attempts: 1,
            message: "scripted provider exhausted".into(),
        })
    }
}

/// Transport that counts requests and refuses all of them.
#[derive(Default)]
pub struct CountingTransport {
    pub posts: AtomicUsize,
}

impl HttpTransport for CountingTransport {
    fn post(&self, _url: &str, _headers: &[(String, String)], _body: Vec<u8>) -> Result<HttpResponse, TransportError> {
        self.posts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError {
            message: "network disabled in tests".into(),
            transient: false,
        })
    }
}

pub fn call(id: &str, name: &str, args: serde_json::Value) -> ToolCall {
    ToolCall {
        id: id.into(),
        name: name.into(),
        arguments: args.to_string(),
    }
}

pub fn turn(text: &str, calls: Vec<ToolCall>, input: u64, output: u64) -> ModelTurn {
    let finish = if calls.is_empty() { "stop" } else { "tool_calls" };
    ModelTurn {
        text: text.into(),
        tool_calls: calls,
        usage: TokenUsage {
            input_tokens: input,
            output_tokens: output,
        },
        finish_reason: Some(finish.into()),
    }
}

pub const GOLDEN_TASK: &str =
    "Write compute.mk that stores the sum of 1..10 in result.txt, run it, and report the value.";

pub const GOLDEN_SCRIPT: &str = "n = 10\ntotal = n * (n + 1) // 2\nwrite_file('result.txt', str(total))\n";

/// Five provider turns: plan, write, run, read back, answer.
pub fn golden_turns() -> Vec<ModelTurn> {
    vec![
        turn(
            "Planning the work.",
            vec![call(
                "call_plan",
                "todo_write",
                json!({"todos": [
                    {"id": "1", "content": "write compute.mk", "status": "in_progress", "priority": "high"},
                    {"id": "2", "content": "run it", "status": "pending", "priority": "high"},
                    {"id": "3", "content": "check result.txt", "status": "pending", "priority": "medium"}
                ]}),
            )],
            1_800,
            120,
        ),
        turn(
            "",
            vec![call(
                "call_write",
                "write_file",
                json!({"file_path": "compute.mk", "content": GOLDEN_SCRIPT}),
            )],
            2_100,
            90,
        ),
        turn(
            "",
            vec![call("call_run", "python_exec", json!({"code": "run_script('compute.mk')\ntotal"}))],
            2_300,
            40,
        ),
        turn(
            "",
            vec![
                call("call_read", "read_file", json!({"file_path": "result.txt"})),
                call("call_list", "list_files", json!({"pattern": "*"})),
            ],
            2_500,
            35,
        ),
        turn("result.txt contains 55, the sum of 1..10.", vec![], 2_700, 25),
    ]
}

pub fn session_config(workdir: &Path, task: &str) -> SessionConfig {
    let mut cfg = SessionConfig::new(workdir);
    cfg.task = Some(task.into());
    cfg.transcript_path = Some(workdir.parent().unwrap().join(format!(
        "{}.transcript.jsonl",
        workdir.file_name().unwrap().to_string_lossy()
    )));
    cfg
}

/// Runs one session against the mock kernel.
pub fn run_with_mock(cfg: &SessionConfig, provider: &dyn ModelProvider) -> SessionOutcome {
    let manager = KernelManager::new(mock_spec());
    let ctx = ExecutionContext::new(cfg.workdir.canonicalize().unwrap(), cfg.packages.clone());
    let executor = KernelExecutor::new(manager.clone(), ctx);
    let outcome = run_session(cfg, provider, Some(Box::new(executor))).expect("session starts");
    manager.shutdown_all();
    outcome
}

/// Records `turns` through the recorder into `recording`, using a fresh
/// workdir `<root>/record`.
pub fn record(root: &Path, turns: Vec<ModelTurn>, task: &str, recording: &Path) -> SessionOutcome {
    let workdir = root.join("record");
    std::fs::create_dir_all(&workdir).unwrap();
    let recorder = coder_core::llm::Recorder::create(Scripted::new(turns), recording).unwrap();
    run_with_mock(&session_config(&workdir, task), &recorder)
}

/// Files under `dir` (relative path, bytes), excluding the log directory.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            let rel = path.strip_prefix(base).unwrap().to_path_buf();
            if rel.starts_with(coder_core::session::LOG_DIR) {
                continue;
            }
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

pub fn counting_transport() -> Arc<CountingTransport> {
    Arc::new(CountingTransport::default())
}
