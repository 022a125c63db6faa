//! The agent's tool suite.
//!
//! Six tools are exposed to the model under fixed wire names:
//! `read_file`, `write_file`, `list_files`, `delete_file`, `python_exec`
//! and `todo_write`. [`Toolkit::dispatch`] never fails: unknown tools, bad
//! arguments and tool failures all come back as an error [`ToolResult`]
//! that is shown to the model as an observation.

pub mod files;
pub mod sandbox;
pub mod todo;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kernel::{CodeExecutor, ExecStatus, KernelError};
use crate::llm::{ToolCall, ToolSchema};
pub use sandbox::{Sandbox, SandboxError};
pub use todo::{TodoItem, TodoPriority, TodoStatus, TodoStore};

pub const DEFAULT_TRUNCATION_LIMIT: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolErrorKind {
    UnknownTool,
    BadArguments,
    PathEscape,
    NotFound,
    IsADirectory,
    Io,
    Validation,
    ExecutionError,
    Timeout,
    KernelUnavailable,
}

impl fmt::Display for ToolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or("error"))
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub message: String,
}

impl ToolError {
    pub fn new(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<SandboxError> for ToolError {
    fn from(e: SandboxError) -> Self {
        let kind = match e {
            SandboxError::Escape(_) => ToolErrorKind::PathEscape,
            SandboxError::InvalidPath(_) => ToolErrorKind::BadArguments,
            SandboxError::SymlinkLoop(_) | SandboxError::Root { .. } | SandboxError::Io { .. } => {
                ToolErrorKind::Io
            }
        };
        ToolError::new(kind, e.to_string())
    }
}

/// Outcome of one dispatched call, as observed by the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub tool: String,
    pub success: bool,
    /// Text fed back to the model; cut to the truncation limit.
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ToolErrorKind>,
    #[serde(default)]
    pub truncated: bool,
}

impl ToolResult {
    fn ok(call: &ToolCall, payload: String) -> Self {
        Self {
            call_id: call.id.clone(),
            tool: call.name.clone(),
            success: true,
            payload,
            error_kind: None,
            truncated: false,
        }
    }

    fn err(call: &ToolCall, error: ToolError) -> Self {
        Self::failed(call, error.kind, format!("Error [{}]: {}", error.kind, error.message))
    }

    fn failed(call: &ToolCall, kind: ToolErrorKind, payload: String) -> Self {
        Self {
            call_id: call.id.clone(),
            tool: call.name.clone(),
            success: false,
            payload,
            error_kind: Some(kind),
            truncated: false,
        }
    }

    fn truncate(mut self, limit: usize) -> Self {
        if let Some(cut) = truncate_text(&self.payload, limit) {
            self.payload = cut;
            self.truncated = true;
        }
        self
    }
}

/// Cuts `text` to `limit` characters plus a marker line, or `None` when it
/// already fits.
pub fn truncate_text(text: &str, limit: usize) -> Option<String> {
    let total = text.chars().count();
    if total <= limit {
        return None;
    }
    let end = text.char_indices().nth(limit).map_or(text.len(), |(i, _)| i);
    Some(format!(
        "{}\n[output truncated: showing {limit} of {total} characters]",
        &text[..end]
    ))
}

pub fn truncation_marker_present(text: &str) -> bool {
    text.lines()
        .last()
        .is_some_and(|l| l.starts_with("[output truncated: "))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToolName {
    ReadFile,
    WriteFile,
    ListFiles,
    DeleteFile,
    PythonExec,
    TodoWrite,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::ReadFile,
        ToolName::WriteFile,
        ToolName::ListFiles,
        ToolName::DeleteFile,
        ToolName::PythonExec,
        ToolName::TodoWrite,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            ToolName::ReadFile => "read_file",
            ToolName::WriteFile => "write_file",
            ToolName::ListFiles => "list_files",
            ToolName::DeleteFile => "delete_file",
            ToolName::PythonExec => "python_exec",
            ToolName::TodoWrite => "todo_write",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.wire_name() == name)
    }

    pub fn schema(self) -> ToolSchema {
        let (description, parameters) = match self {
            ToolName::ReadFile => (
                "Read a text file from the working directory.",
                json!({
                    "type": "object",
                    "properties": {"file_path": {"type": "string", "description": "Path relative to the working directory"}},
                    "required": ["file_path"],
                    "additionalProperties": false
                }),
            ),
            ToolName::WriteFile => (
                "Write a file in the working directory, creating parent directories as needed. Overwrites existing files.",
                json!({
                    "type": "object",
                    "properties": {
                        "file_path": {"type": "string", "description": "Path relative to the working directory"},
                        "content": {"type": "string"}
                    },
                    "required": ["file_path", "content"],
                    "additionalProperties": false
                }),
            ),
            ToolName::ListFiles => (
                "List files in the working directory, optionally filtered by a glob pattern.",
                json!({
                    "type": "object",
                    "properties": {"pattern": {"type": "string", "default": "*"}},
                    "additionalProperties": false
                }),
            ),
            ToolName::DeleteFile => (
                "Delete a file from the working directory.",
                json!({
                    "type": "object",
                    "properties": {"file_path": {"type": "string"}},
                    "required": ["file_path"],
                    "additionalProperties": false
                }),
            ),
            ToolName::PythonExec => (
                "Execute Python code in a persistent kernel. Variables, functions and imports survive between calls. The kernel runs in the working directory.",
                json!({
                    "type": "object",
                    "properties": {"code": {"type": "string"}},
                    "required": ["code"],
                    "additionalProperties": false
                }),
            ),
            ToolName::TodoWrite => (
                "Replace the task list. Each task needs id, content, status (pending, in_progress, completed) and priority (high, medium, low). At most one task may be in_progress.",
                json!({
                    "type": "object",
                    "properties": {
                        "todos": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "properties": {
                                    "id": {"type": "string"},
                                    "content": {"type": "string"},
                                    "status": {"type": "string", "enum": ["pending", "in_progress", "completed"]},
                                    "priority": {"type": "string", "enum": ["high", "medium", "low"]}
                                },
                                "required": ["id", "content", "status", "priority"],
                                "additionalProperties": false
                            }
                        }
                    },
                    "required": ["todos"],
                    "additionalProperties": false
                }),
            ),
        };
        ToolSchema {
            name: self.wire_name().to_string(),
            description: description.to_string(),
            parameters,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathArgs {
    file_path: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WriteArgs {
    file_path: String,
    content: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ListArgs {
    #[serde(default = "default_pattern")]
    pattern: String,
}

fn default_pattern() -> String {
    "*".to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecArgs {
    code: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TodoArgs {
    todos: Value,
}

/// Registry of the six tools bound to one session's sandbox.
pub struct Toolkit {
    sandbox: Sandbox,
    todos: TodoStore,
    executor: Option<Box<dyn CodeExecutor>>,
    truncation_limit: usize,
}

impl Toolkit {
    pub fn new(sandbox: Sandbox) -> Self {
        Self {
            sandbox,
            todos: TodoStore::default(),
            executor: None,
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
        }
    }

    pub fn with_executor(mut self, executor: Box<dyn CodeExecutor>) -> Self {
        self.executor = Some(executor);
        self
    }

    pub fn with_truncation_limit(mut self, limit: usize) -> Self {
        self.truncation_limit = limit;
        self
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn todos(&self) -> &[TodoItem] {
        self.todos.items()
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        ToolName::ALL.iter().map(|t| t.schema()).collect()
    }

    pub fn dispatch(&mut self, call: &ToolCall) -> ToolResult {
        let result = match ToolName::from_wire(&call.name) {
            None => ToolResult::err(
                call,
                ToolError::new(
                    ToolErrorKind::UnknownTool,
                    format!(
                        "unknown tool `{}`; available tools: {}",
                        call.name,
                        ToolName::ALL.map(|t| t.wire_name()).join(", ")
                    ),
                ),
            ),
            Some(tool) => self.invoke(tool, call),
        };
        result.truncate(self.truncation_limit)
    }

    fn invoke(&mut self, tool: ToolName, call: &ToolCall) -> ToolResult {
        let args = match parse_arguments(&call.arguments) {
            Ok(v) => v,
            Err(e) => return ToolResult::err(call, e),
        };
        let outcome = match tool {
            ToolName::ReadFile => typed::<PathArgs>(args).and_then(|a| {
                let out = files::read_file(&self.sandbox, &a.file_path)?;
                Ok(if out.lossy {
                    format!(
                        "{}\n[warning: file is not valid UTF-8; invalid bytes were replaced with U+FFFD]",
                        out.text
                    )
                } else {
                    out.text
                })
            }),
            ToolName::WriteFile => typed::<WriteArgs>(args)
                .and_then(|a| files::write_file(&self.sandbox, &a.file_path, &a.content)),
            ToolName::ListFiles => typed::<ListArgs>(args).and_then(|a| {
                let names = files::list_files(&self.sandbox, &a.pattern)?;
                Ok(if names.is_empty() {
                    format!("No files match `{}`.", a.pattern)
                } else {
                    names.join("\n")
                })
            }),
            ToolName::DeleteFile => typed::<PathArgs>(args)
                .and_then(|a| files::delete_file(&self.sandbox, &a.file_path)),
            ToolName::TodoWrite => typed::<TodoArgs>(args).and_then(|a| {
                self.todos
                    .write(&a.todos)
                    .map_err(|e| ToolError::new(ToolErrorKind::Validation, e.to_string()))
            }),
            ToolName::PythonExec => {
                return match typed::<ExecArgs>(args) {
                    Ok(a) => self.exec(call, &a.code),
                    Err(e) => ToolResult::err(call, e),
                }
            }
        };
        match outcome {
            Ok(text) => ToolResult::ok(call, text),
            Err(e) => ToolResult::err(call, e),
        }
    }

    fn exec(&mut self, call: &ToolCall, code: &str) -> ToolResult {
        let Some(executor) = self.executor.as_mut() else {
            return ToolResult::err(
                call,
                ToolError::new(ToolErrorKind::KernelUnavailable, "no code execution kernel is configured"),
            );
        };
        match executor.execute(code) {
            Ok(result) if result.status == ExecStatus::Ok => ToolResult::ok(call, result.render()),
            Ok(result) => ToolResult::failed(call, ToolErrorKind::ExecutionError, result.render()),
            Err(KernelError::Timeout(secs)) => ToolResult::err(
                call,
                ToolError::new(
                    ToolErrorKind::Timeout,
                    format!("execution timed out after {secs:.0}s; the kernel will be restarted on the next call"),
                ),
            ),
            Err(e) => ToolResult::err(call, ToolError::new(ToolErrorKind::KernelUnavailable, e.to_string())),
        }
    }
}

fn parse_arguments(raw: &str) -> Result<Value, ToolError> {
    let raw = if raw.trim().is_empty() { "{}" } else { raw };
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(other) => Err(ToolError::new(
            ToolErrorKind::BadArguments,
            format!("arguments must be a JSON object, got {other}"),
        )),
        Err(e) => Err(ToolError::new(
            ToolErrorKind::BadArguments,
            format!("could not parse arguments as JSON: {e}"),
        )),
    }
}

fn typed<T: for<'de> Deserialize<'de>>(args: Value) -> Result<T, ToolError> {
    serde_json::from_value(args)
        .map_err(|e| ToolError::new(ToolErrorKind::BadArguments, format!("invalid arguments: {e}")))
}
