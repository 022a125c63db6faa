//! Record and replay of model exchanges.
//!
//! A recording is JSONL, one `{fingerprint, turn}` object per exchange, in
//! request order. Replay consumes entries strictly in order and fails as soon
//! as a request's fingerprint differs from the next recorded one.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, ModelProvider, ModelTurn, ProviderError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub fingerprint: String,
    pub turn: ModelTurn,
}

pub fn read_recording(path: &Path) -> Result<Vec<RecordedExchange>, ProviderError> {
    let io_err = |source| ProviderError::Recording {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let exchange = serde_json::from_str(&line).map_err(|e| {
            ProviderError::Decode(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(exchange);
    }
    Ok(out)
}

/// Wraps a provider and appends every successful exchange to a recording.
pub struct Recorder<P> {
    inner: P,
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl<P: ModelProvider> Recorder<P> {
    /// Truncates `path` and starts a fresh recording.
    pub fn create(inner: P, path: &Path) -> Result<Self, ProviderError> {
        let io_err = |source| ProviderError::Recording {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io_err)?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn record(&self, exchange: &RecordedExchange) -> Result<(), ProviderError> {
        let io_err = |source| ProviderError::Recording {
            path: self.path.clone(),
            source,
        };
        let line = serde_json::to_string(exchange).map_err(|e| ProviderError::Decode(e.to_string()))?;
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(out, "{line}").map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: ModelProvider> ModelProvider for Recorder<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        let turn = self.inner.complete(request)?;
        self.record(&RecordedExchange {
            fingerprint: request.fingerprint(),
            turn: turn.clone(),
        })?;
        Ok(turn)
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings()
    }
}

/// Serves recorded turns; performs no network activity.
pub struct ReplayProvider {
    source: String,
    entries: Vec<RecordedExchange>,
    cursor: Mutex<usize>,
}

impl ReplayProvider {
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::from_entries(
            path.display().to_string(),
            read_recording(path)?,
        ))
    }

    pub fn from_entries(source: impl Into<String>, entries: Vec<RecordedExchange>) -> Self {
        Self {
            source: source.into(),
            entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.consumed()
    }
}

impl ModelProvider for ReplayProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|p| p.into_inner());
        let index = *cursor;
        let entry = self
            .entries
            .get(index)
            .ok_or(ProviderError::ReplayExhausted(index))?;
        let actual = request.fingerprint();
        if entry.fingerprint != actual {
            return Err(ProviderError::ReplayDivergence {
                index,
                expected: entry.fingerprint.clone(),
                actual,
            });
        }
        *cursor += 1;
        Ok(entry.turn.clone())
    }

    fn warnings(&self) -> Vec<String> {
        match self.remaining() {
            0 => Vec::new(),
            n => vec![format!(
                "replay: {n} recorded exchange(s) in {} were not used",
                self.source
            )],
        }
    }
}
