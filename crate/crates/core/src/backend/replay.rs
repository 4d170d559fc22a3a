//! `.chatlog` fixtures: one JSON object per line, one line per backend call.
//!
//! ```text
//! # comments and blank lines are ignored
//! {"seq":1,"digest":null,"response":"hello","prompt_tokens":12,"completion_tokens":3}
//! ```
//!
//! `digest` is the request's [`prompt_digest`](super::ChatRequest::prompt_digest)
//! and is only checked in [`ReplayMode::Strict`].

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub seq: usize,
    #[serde(default)]
    pub digest: Option<String>,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl FixtureRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("fixture records always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Match by sequence position only.
    #[default]
    Lenient,
    /// Also require the request digest to equal the recorded one.
    Strict,
}

pub fn parse_fixture(text: &str) -> Result<Vec<FixtureRecord>, BackendError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record: FixtureRecord = serde_json::from_str(line)
            .map_err(|e| BackendError::Fixture(format!("line {}: {e}", lineno + 1)))?;
        let expected = records.len() + 1;
        if record.seq != expected {
            return Err(BackendError::Fixture(format!(
                "line {}: expected seq {expected}, found {}",
                lineno + 1,
                record.seq
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Serves fixture responses in order. Holds no clock or randomness.
#[derive(Debug)]
pub struct ReplayBackend {
    records: Vec<FixtureRecord>,
    mode: ReplayMode,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn from_records(records: Vec<FixtureRecord>, mode: ReplayMode) -> Self {
        ReplayBackend {
            records,
            mode,
            cursor: Mutex::new(0),
        }
    }

    /// Responses with zero usage, numbered from 1. Handy for tests.
    pub fn scripted<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        let records = responses
            .into_iter()
            .enumerate()
            .map(|(i, r)| FixtureRecord {
                seq: i + 1,
                digest: None,
                response: r.into(),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();
        ReplayBackend::from_records(records, ReplayMode::Lenient)
    }

    pub fn from_path(path: &Path, mode: ReplayMode) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        Ok(ReplayBackend::from_records(parse_fixture(&text)?, mode))
    }

    pub fn records(&self) -> &[FixtureRecord] {
        &self.records
    }

    /// Calls served so far.
    pub fn served(&self) -> usize {
        *self.cursor.lock().expect("replay cursor poisoned")
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - self.served()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let index = *cursor + 1;
        let record = self
            .records
            .get(*cursor)
            .ok_or(BackendError::FixtureExhausted { index })?;
        if self.mode == ReplayMode::Strict {
            if let Some(expected) = &record.digest {
                let actual = request.prompt_digest();
                if &actual != expected {
                    return Err(BackendError::Drift {
                        index,
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
        }
        *cursor += 1;
        Ok(ChatResponse {
            content: record.response.clone(),
            usage: Usage {
                prompt_tokens: record.prompt_tokens,
                completion_tokens: record.completion_tokens,
            },
        })
    }
}

/// Proxies another backend and appends every exchange to a fixture file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    sink: Mutex<(BufWriter<File>, usize)>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Truncates (or creates) `path`; a run with no calls leaves it empty.
    pub fn create(inner: B, path: &Path) -> Result<Self, BackendError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(RecordingBackend {
            inner,
            path: path.to_path_buf(),
            sink: Mutex::new((BufWriter::new(file), 0)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recorded(&self) -> usize {
        self.sink.lock().expect("recorder poisoned").1
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let mut sink = self.sink.lock().expect("recorder poisoned");
        sink.1 += 1;
        let record = FixtureRecord {
            seq: sink.1,
            digest: Some(request.prompt_digest()),
            response: response.content.clone(),
            prompt_tokens: response.usage.prompt_tokens,
            completion_tokens: response.usage.completion_tokens,
        };
        writeln!(sink.0, "{}", record.to_line())?;
        sink.0.flush()?;
        Ok(response)
    }
}
