//! Persistent interactive kernel.
//!
//! The kernel is a separate process reached over ZeroMQ with the Jupyter
//! messaging protocol (v5.3). [`KernelManager`] owns the launch and keeps at
//! most one kernel alive, keyed by [`ExecutionContext`]; a different context
//! shuts the old kernel down before a new one starts. Package sets are
//! honored by wrapping the launch in an ephemeral-environment command.
//!
//! [`mock`] is a protocol-exact kernel peer used by the test suite and the
//! `mock-kernel` binary.

mod client;
mod connection;
mod manager;
pub mod mock;
pub mod wire;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::KernelClient;
pub use connection::ConnectionInfo;
pub use manager::{
    install_exit_hook, shutdown_registered_kernels, EnvWrapper, KernelExecutor, KernelHandle, KernelManager,
    LaunchSpec,
};
pub use wire::{sign_frames, verify_signature, Header, WireError, WireMessage};

/// Identity of a kernel: where it runs and which packages it sees.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecutionContext {
    pub workdir: PathBuf,
    packages: Vec<String>,
}

impl ExecutionContext {
    /// Packages are sorted and de-duplicated so that equal sets compare equal.
    pub fn new(workdir: impl Into<PathBuf>, packages: impl IntoIterator<Item = String>) -> Self {
        let mut packages: Vec<String> = packages.into_iter().collect();
        packages.sort();
        packages.dedup();
        Self {
            workdir: workdir.into(),
            packages,
        }
    }

    pub fn packages(&self) -> &[String] {
        &self.packages
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    #[default]
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecError {
    pub name: String,
    pub message: String,
    pub traceback: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    /// `text/plain` of the execute_result broadcast, if any.
    pub result: Option<String>,
    pub error: Option<ExecError>,
    pub execution_count: u64,
    /// msg_id of the execute_request every collected message answered.
    pub request_id: String,
}

impl ExecutionResult {
    /// Text shown to the model. ANSI escapes are removed from tracebacks.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if !self.stdout.is_empty() {
            parts.push(self.stdout.trim_end_matches('\n').to_string());
        }
        if !self.stderr.is_empty() {
            parts.push(format!("[stderr]\n{}", self.stderr.trim_end_matches('\n')));
        }
        if let Some(result) = &self.result {
            parts.push(format!("[result]\n{result}"));
        }
        if let Some(err) = &self.error {
            let mut text = format!("[error] {}: {}", err.name, err.message);
            let tb: Vec<String> = err.traceback.iter().map(|l| strip_ansi(l)).collect();
            if !tb.is_empty() {
                text.push('\n');
                text.push_str(&tb.join("\n"));
            }
            parts.push(text);
        }
        if parts.is_empty() {
            "[no output]".to_string()
        } else {
            parts.join("\n")
        }
    }
}

/// Removes CSI (`ESC [ ... final`) and OSC (`ESC ] ... BEL`) sequences.
pub fn strip_ansi(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\u{1b}' {
            out.push(c);
            continue;
        }
        match chars.peek() {
            Some('[') => {
                chars.next();
                for c in chars.by_ref() {
                    if ('@'..='~').contains(&c) {
                        break;
                    }
                }
            }
            Some(']') => {
                chars.next();
                while let Some(c) = chars.next() {
                    if c == '\u{7}' {
                        break;
                    }
                    if c == '\u{1b}' && chars.peek() == Some(&'\\') {
                        chars.next();
                        break;
                    }
                }
            }
            _ => {
                chars.next();
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel launch failed: {0}")]
    Launch(String),
    #[error("environment provisioning failed: {0}")]
    Provision(String),
    #[error("execution timed out after {0:.1}s")]
    Timeout(f64),
    #[error("kernel is not running: {0}")]
    Dead(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("socket error: {0}")]
    Socket(#[from] zmq::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Something that runs code for `python_exec`.
pub trait CodeExecutor: Send {
    fn execute(&mut self, code: &str) -> Result<ExecutionResult, KernelError>;
}
