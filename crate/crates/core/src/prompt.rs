//! Three-layer prompt: system, project, task.
//!
//! The system layer describes how to behave as a coding agent, the project
//! layer carries domain knowledge for a problem class, and the task layer
//! is the concrete problem. The first two are joined into one system
//! message; the task becomes the first user message.

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use crate::session::{Message, SessionConfig};
use crate::tools::{files, Sandbox};

/// General coding-agent instructions shipped with the crate.
pub const SYSTEM_PROMPT: &str = include_str!("../assets/system_prompt.md");

/// Abridged constraint-modeling project prompt.
pub const CONSTRAINT_MODELING_PROMPT: &str = include_str!("../assets/cpmpy_project.md");

pub const LAYER_DELIMITER: &str = "\n\n---\n\n";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Builtin,
    Inline,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub project: Option<String>,
    pub task: String,
    pub system_source: Provenance,
    pub project_source: Option<Provenance>,
    pub task_source: Provenance,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no task given and {0} was not found in the working directory")]
    MissingTask(String),
    #[error("task is empty")]
    EmptyTask,
    #[error("system prompt is empty")]
    EmptySystem,
    #[error("cannot read project prompt {path}: {source}")]
    MissingProject {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read task file: {0}")]
    TaskFile(String),
}

/// Loads the prompt layers named by `config`.
///
/// The task file is read through the sandbox; the project prompt is read
/// from wherever it lives.
pub fn load_bundle(config: &SessionConfig) -> Result<PromptBundle, PromptError> {
    let (system, system_source) = match &config.system_prompt {
        Some(text) => (text.clone(), Provenance::Inline),
        None => (SYSTEM_PROMPT.to_string(), Provenance::Builtin),
    };
    if system.trim().is_empty() {
        return Err(PromptError::EmptySystem);
    }

    let (project, project_source) = match &config.project_prompt {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| PromptError::MissingProject {
                path: path.clone(),
                source,
            })?;
            (Some(text), Some(Provenance::File(path.clone())))
        }
        None => (None, None),
    };

    let (task, task_source) = match &config.task {
        Some(text) => (text.clone(), Provenance::Inline),
        None => {
            let sandbox =
                Sandbox::new(&config.workdir).map_err(|e| PromptError::TaskFile(e.to_string()))?;
            let name = &config.task_file;
            match files::read_file(&sandbox, name) {
                Ok(out) => {
                    let path = sandbox.resolve(name).unwrap_or_else(|_| sandbox.root().join(name));
                    (out.text, Provenance::File(path))
                }
                Err(e) if e.kind == crate::tools::ToolErrorKind::NotFound => {
                    return Err(PromptError::MissingTask(name.clone()))
                }
                Err(e) => return Err(PromptError::TaskFile(e.message)),
            }
        }
    };
    if task.trim().is_empty() {
        return Err(PromptError::EmptyTask);
    }

    Ok(PromptBundle {
        system,
        project,
        task,
        system_source,
        project_source,
        task_source,
    })
}

/// `[system(system + delimiter + project), user(task)]`.
pub fn compose(bundle: &PromptBundle) -> Vec<Message> {
    let system = match &bundle.project {
        Some(project) => format!("{}{LAYER_DELIMITER}{}", bundle.system, project),
        None => bundle.system.clone(),
    };
    vec![Message::system(system), Message::user(bundle.task.clone())]
}
