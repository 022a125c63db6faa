//! The in-memory task list behind `todo_write`.
//!
//! There is deliberately no read tool: once written, the rendered list is
//! part of the conversation and the model sees it there.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TodoStatus {
    Pending,
    InProgress,
    Completed,
}

impl TodoStatus {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Self::Pending),
            "in_progress" => Some(Self::InProgress),
            "completed" => Some(Self::Completed),
            _ => None,
        }
    }

    pub fn glyph(self) -> char {
        match self {
            Self::Completed => '✓',
            Self::InProgress => '▸',
            Self::Pending => '☐',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TodoPriority {
    High,
    Medium,
    Low,
}

impl TodoPriority {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(Self::High),
            "medium" => Some(Self::Medium),
            "low" => Some(Self::Low),
            _ => None,
        }
    }
}

impl fmt::Display for TodoPriority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::High => "high",
            Self::Medium => "medium",
            Self::Low => "low",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TodoItem {
    pub id: String,
    pub content: String,
    pub status: TodoStatus,
    pub priority: TodoPriority,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TodoError {
    #[error("`todos` must be an array")]
    NotAList,
    #[error("todo #{index} must be an object")]
    NotAnObject { index: usize },
    #[error("todo #{index} is missing field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("todo #{index} has unknown field `{field}`")]
    UnknownField { index: usize, field: String },
    #[error("todo #{index}: field `{field}` must be a string")]
    NotAString { index: usize, field: &'static str },
    #[error("todo #{index}: `content` must not be empty")]
    EmptyContent { index: usize },
    #[error("todo #{index}: `id` must not be empty")]
    EmptyId { index: usize },
    #[error("todo #{index}: unknown status `{value}` (expected pending, in_progress or completed)")]
    UnknownStatus { index: usize, value: String },
    #[error("todo #{index}: unknown priority `{value}` (expected high, medium or low)")]
    UnknownPriority { index: usize, value: String },
    #[error("todo #{index}: duplicate id `{id}`")]
    DuplicateId { index: usize, id: String },
    #[error("only one task can be in_progress at a time (found {count})")]
    MultipleInProgress { count: usize },
}

const FIELDS: [&str; 4] = ["id", "content", "status", "priority"];

/// Validates a raw `todos` argument, reporting the first violated rule.
///
/// Per-item rules are checked item by item in order; the single
/// in-progress rule is checked once every item is individually valid.
pub fn parse_todos(value: &Value) -> Result<Vec<TodoItem>, TodoError> {
    let list = value.as_array().ok_or(TodoError::NotAList)?;
    let mut items = Vec::with_capacity(list.len());
    let mut ids = HashSet::new();
    for (index, raw) in list.iter().enumerate() {
        let obj = raw.as_object().ok_or(TodoError::NotAnObject { index })?;
        for field in FIELDS {
            if !obj.contains_key(field) {
                return Err(TodoError::MissingField { index, field });
            }
        }
        if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(TodoError::UnknownField {
                index,
                field: extra.clone(),
            });
        }
        let text = |field: &'static str| {
            obj[field]
                .as_str()
                .ok_or(TodoError::NotAString { index, field })
        };
        let id = text("id")?;
        if id.trim().is_empty() {
            return Err(TodoError::EmptyId { index });
        }
        let content = text("content")?;
        if content.trim().is_empty() {
            return Err(TodoError::EmptyContent { index });
        }
        let status_raw = text("status")?;
        let status = TodoStatus::parse(status_raw).ok_or_else(|| TodoError::UnknownStatus {
            index,
            value: status_raw.to_string(),
        })?;
        let priority_raw = text("priority")?;
        let priority =
            TodoPriority::parse(priority_raw).ok_or_else(|| TodoError::UnknownPriority {
                index,
                value: priority_raw.to_string(),
            })?;
        if !ids.insert(id.to_string()) {
            return Err(TodoError::DuplicateId {
                index,
                id: id.to_string(),
            });
        }
        items.push(TodoItem {
            id: id.to_string(),
            content: content.to_string(),
            status,
            priority,
        });
    }
    let count = items
        .iter()
        .filter(|t| t.status == TodoStatus::InProgress)
        .count();
    if count > 1 {
        return Err(TodoError::MultipleInProgress { count });
    }
    Ok(items)
}

/// Session-scoped task list. Replaced wholesale on every accepted write.
#[derive(Debug, Default)]
pub struct TodoStore {
    items: Vec<TodoItem>,
}

impl TodoStore {
    pub fn write(&mut self, value: &Value) -> Result<String, TodoError> {
        self.items = parse_todos(value)?;
        Ok(render(&self.items))
    }

    pub fn items(&self) -> &[TodoItem] {
        &self.items
    }
}

/// One line per item: `<glyph> [<priority>] <content> (id: <id>)`.
/// Line breaks inside content or ids are shown as spaces.
pub fn render(items: &[TodoItem]) -> String {
    if items.is_empty() {
        return "Todo list cleared.".to_string();
    }
    let flat = |s: &str| s.replace(['\r', '\n'], " ");
    items
        .iter()
        .map(|t| format!("{} [{}] {} (id: {})", t.status.glyph(), t.priority, flat(&t.content), flat(&t.id)))
        .collect::<Vec<_>>()
        .join("\n")
}
