use serde::{Deserialize, Serialize};

use crate::session::UsageStats;
use crate::tools::ToolName;

/// Per-problem tool counts and unscaled token totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub problem_id: String,
    pub read: u64,
    pub write: u64,
    pub exec: u64,
    pub todo: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl RunStats {
    pub fn empty(id: &str) -> Self {
        Self {
            problem_id: id.to_string(),
            ..Self::default()
        }
    }

    pub fn from_usage(id: &str, usage: &UsageStats) -> Self {
        Self {
            problem_id: id.to_string(),
            read: usage.calls(ToolName::ReadFile.wire_name()),
            write: usage.calls(ToolName::WriteFile.wire_name()),
            exec: usage.calls(ToolName::PythonExec.wire_name()),
            todo: usage.calls(ToolName::TodoWrite.wire_name()),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
        }
    }
}

/// Tokens in thousands, rounded half up.
pub fn thousands(tokens: u64) -> u64 {
    tokens.saturating_add(500) / 1000
}

/// `r w ex td in/out`, e.g. `1 1 4 0 85/3`.
pub fn format_stats_row(stats: &RunStats) -> String {
    format!(
        "{} {} {} {} {}/{}",
        stats.read,
        stats.write,
        stats.exec,
        stats.todo,
        thousands(stats.input_tokens),
        thousands(stats.output_tokens)
    )
}

/// Header plus one row per problem, ordered by problem id. Each row is the
/// id padded to a common width followed by [`format_stats_row`].
pub fn emit_stats_table(stats: &[RunStats]) -> String {
    let mut rows: Vec<&RunStats> = stats.iter().collect();
    rows.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let width = rows
        .iter()
        .map(|s| s.problem_id.chars().count())
        .chain(std::iter::once("problem".len()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{:<width$} r w ex td in/out\n", "problem");
    for s in rows {
        out.push_str(&format!("{:<width$} {}\n", s.problem_id, format_stats_row(s)));
    }
    out
}
