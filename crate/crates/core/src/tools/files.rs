//! File tools. All paths go through [`Sandbox::resolve`].

use std::fs;
use std::io;
use std::path::{Component, Path};

use super::sandbox::{Sandbox, SandboxError};
use super::{ToolError, ToolErrorKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileText {
    pub text: String,
    /// Invalid UTF-8 was replaced with U+FFFD.
    pub lossy: bool,
}

pub fn read_file(sandbox: &Sandbox, path: &str) -> Result<FileText, ToolError> {
    let abs = sandbox.resolve(path)?;
    let meta = fs::metadata(&abs).map_err(|e| io_error(path, e))?;
    if meta.is_dir() {
        return Err(ToolError::new(
            ToolErrorKind::IsADirectory,
            format!("`{path}` is a directory"),
        ));
    }
    let bytes = fs::read(&abs).map_err(|e| io_error(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(text) => FileText { text, lossy: false },
        Err(e) => FileText {
            text: String::from_utf8_lossy(e.as_bytes()).into_owned(),
            lossy: true,
        },
    })
}

pub fn write_file(sandbox: &Sandbox, path: &str, content: &str) -> Result<String, ToolError> {
    let abs = sandbox.resolve(path)?;
    if abs.is_dir() {
        return Err(ToolError::new(
            ToolErrorKind::IsADirectory,
            format!("`{path}` is a directory"),
        ));
    }
    if let Some(parent) = abs.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(path, e))?;
    }
    fs::write(&abs, content).map_err(|e| io_error(path, e))?;
    let shown = sandbox.relative(&abs).unwrap_or_else(|| path.to_string());
    Ok(format!("Wrote {} bytes to {shown}", content.len()))
}

pub fn delete_file(sandbox: &Sandbox, path: &str) -> Result<String, ToolError> {
    let abs = sandbox.resolve(path)?;
    let meta = fs::metadata(&abs).map_err(|e| io_error(path, e))?;
    if meta.is_dir() {
        return Err(ToolError::new(
            ToolErrorKind::IsADirectory,
            format!("`{path}` is a directory; only files can be deleted"),
        ));
    }
    fs::remove_file(&abs).map_err(|e| io_error(path, e))?;
    let shown = sandbox.relative(&abs).unwrap_or_else(|| path.to_string());
    Ok(format!("Deleted {shown}"))
}

/// Regular files matching `pattern`, relative to the root, sorted.
pub fn list_files(sandbox: &Sandbox, pattern: &str) -> Result<Vec<String>, ToolError> {
    let pattern = if pattern.trim().is_empty() { "*" } else { pattern };
    let as_path = Path::new(pattern);
    if as_path.is_absolute() || as_path.components().any(|c| matches!(c, Component::ParentDir)) {
        return Err(SandboxError::Escape(pattern.to_string()).into());
    }
    let full = format!(
        "{}/{}",
        glob::Pattern::escape(&sandbox.root().to_string_lossy()),
        pattern
    );
    // As in a shell, wildcards do not match a leading dot; `.coder/*`
    // still lists hidden entries when named explicitly.
    let options = glob::MatchOptions {
        require_literal_leading_dot: true,
        ..glob::MatchOptions::new()
    };
    let entries = glob::glob_with(&full, options).map_err(|e| {
        ToolError::new(
            ToolErrorKind::BadArguments,
            format!("invalid glob pattern `{pattern}`: {e}"),
        )
    })?;
    let mut names = Vec::new();
    for entry in entries.flatten() {
        // Symlinked entries must resolve inside the root to be listed.
        let Some(rel) = sandbox.relative(&entry) else {
            continue;
        };
        let Ok(resolved) = sandbox.resolve(&rel) else {
            continue;
        };
        if fs::metadata(&resolved).map(|m| m.is_file()).unwrap_or(false) {
            names.push(rel);
        }
    }
    names.sort();
    names.dedup();
    Ok(names)
}

fn io_error(path: &str, e: io::Error) -> ToolError {
    match e.kind() {
        io::ErrorKind::NotFound => {
            ToolError::new(ToolErrorKind::NotFound, format!("`{path}` not found"))
        }
        io::ErrorKind::IsADirectory => {
            ToolError::new(ToolErrorKind::IsADirectory, format!("`{path}` is a directory"))
        }
        _ => ToolError::new(ToolErrorKind::Io, format!("`{path}`: {e}")),
    }
}
