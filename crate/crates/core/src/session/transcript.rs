//! JSONL transcripts.
//!
//! One object per line: `{seq, ts, kind, payload, usage?}`. Sequence numbers
//! start at 0 and increase by one per line.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::llm::{ModelTurn, TokenUsage, ToolCall};
use crate::tools::ToolResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ModelTurn,
    ToolCall,
    ToolResult,
    Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub ts: String,
    pub kind: EventKind,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

impl TranscriptEvent {
    pub fn new(seq: u64, kind: EventKind, payload: Value, usage: Option<TokenUsage>) -> Self {
        Self {
            seq,
            ts: now_rfc3339(),
            kind,
            payload,
            usage,
        }
    }

    /// The event without its timestamp, for determinism comparisons.
    pub fn comparison_form(&self) -> Value {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        if let Some(obj) = v.as_object_mut() {
            obj.remove("ts");
        }
        v
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Writes `events` to `path`, one line each, renumbering `seq` from 0.
/// An empty slice produces an empty file.
pub fn persist_transcript(events: &[TranscriptEvent], path: &Path) -> io::Result<()> {
    let mut out = BufWriter::new(create(path)?);
    for (i, event) in events.iter().enumerate() {
        let mut event = event.clone();
        event.seq = i as u64;
        write_line(&mut out, &event)?;
    }
    out.flush()
}

pub fn read_transcript(path: &Path) -> io::Result<Vec<TranscriptEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Transcript with timestamps removed.
pub fn comparison_form(events: &[TranscriptEvent]) -> Vec<Value> {
    events.iter().map(TranscriptEvent::comparison_form).collect()
}

fn create(path: &Path) -> io::Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    File::create(path)
}

fn write_line(out: &mut impl Write, event: &TranscriptEvent) -> io::Result<()> {
    serde_json::to_writer(&mut *out, event)?;
    out.write_all(b"\n")
}

/// Incremental transcript writer used by the session loop.
///
/// The first I/O error is kept and later writes become no-ops, so the loop
/// can check [`TranscriptWriter::error`] once per step instead of after
/// every line.
pub struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<File>,
    seq: u64,
    error: Option<io::Error>,
}

impl TranscriptWriter {
    pub fn create(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let out = BufWriter::new(create(&path)?);
        Ok(Self {
            path,
            out,
            seq: 0,
            error: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn error(&self) -> Option<&io::Error> {
        self.error.as_ref()
    }

    pub fn record(&mut self, kind: EventKind, payload: Value, usage: Option<TokenUsage>) {
        if self.error.is_some() {
            return;
        }
        let event = TranscriptEvent::new(self.seq, kind, payload, usage);
        match write_line(&mut self.out, &event) {
            Ok(()) => self.seq += 1,
            Err(e) => self.error = Some(e),
        }
    }

    pub fn model_turn(&mut self, iteration: u32, turn: &ModelTurn) {
        self.record(
            EventKind::ModelTurn,
            json!({
                "iteration": iteration,
                "text": turn.text,
                "tool_calls": turn.tool_calls,
                "finish_reason": turn.finish_reason,
            }),
            Some(turn.usage),
        );
    }

    pub fn tool_call(&mut self, call: &ToolCall) {
        self.record(EventKind::ToolCall, json!(call), None);
    }

    pub fn tool_result(&mut self, result: &ToolResult) {
        self.record(EventKind::ToolResult, json!(result), None);
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Vec<TranscriptEvent> {
        let kinds = [EventKind::ModelTurn, EventKind::ToolCall, EventKind::ToolResult, EventKind::Outcome];
        (0..n)
            .map(|i| {
                let usage = (i % 4 == 0).then_some(TokenUsage {
                    input_tokens: 100 * i as u64,
                    output_tokens: i as u64,
                });
                TranscriptEvent::new(i as u64, kinds[i % 4], json!({"i": i, "text": format!("é{i}\n")}), usage)
            })
            .collect()
    }

    #[test]
    fn three_events_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut events = sample(3);
        for e in &mut events {
            e.seq = 99;
        }
        persist_transcript(&events, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let seqs: Vec<u64> = read_transcript(&path).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[test]
    fn empty_list_creates_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/empty.jsonl");
        persist_transcript(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"");
    }

    #[test]
    fn round_trip_ten_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let events = sample(10);
        persist_transcript(&events, &path).unwrap();
        assert_eq!(read_transcript(&path).unwrap(), events);
    }

    #[test]
    fn line_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        persist_transcript(&sample(2), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "model_turn");
        assert_eq!(first["usage"]["input_tokens"], 0);
        assert!(chrono::DateTime::parse_from_rfc3339(first["ts"].as_str().unwrap()).is_ok());
        let second: Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert!(second.get("usage").is_none());
    }

    #[test]
    fn comparison_form_drops_only_ts() {
        let a = sample(4);
        let mut b = a.clone();
        for e in &mut b {
            e.ts = "1970-01-01T00:00:00Z".into();
        }
        assert_ne!(a, b);
        assert_eq!(comparison_form(&a), comparison_form(&b));
        b[1].payload = json!({});
        assert_ne!(comparison_form(&a), comparison_form(&b));
    }

    #[test]
    fn writer_numbers_from_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let mut w = TranscriptWriter::create(&path).unwrap();
        for i in 0..5 {
            w.record(EventKind::ToolCall, json!({"i": i}), None);
        }
        w.flush().unwrap();
        let events = read_transcript(&path).unwrap();
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }
}
