//! Record/replay of backend interactions keyed by request fingerprint.
//!
//! A cassette is a JSONL file of `{"fingerprint": ..., "response": ...}`
//! entries. Chat responses are JSON strings, embedding responses are arrays
//! of vectors. Recording appends under a single writer lock; replay serves
//! from memory and never reaches a backend.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, ChatRequest, EmbeddingRequest, GatewayError, GatewayResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub response: Value,
}

#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    entries: RwLock<HashMap<String, Value>>,
    writer: Mutex<Option<File>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::InvalidRequest(format!("cassette {}: {e}", path.display()))
}

impl Cassette {
    /// Loads `path` if it exists; a missing file is an empty cassette.
    pub fn open(path: &Path) -> GatewayResult<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| io_err(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CassetteEntry = serde_json::from_str(&line)
                    .map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?;
                entries.insert(entry.fingerprint, entry.response);
            }
        }
        Ok(Self {
            path: path.to_owned(),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<Value> {
        self.entries
            .read()
            .expect("cassette lock")
            .get(fingerprint)
            .cloned()
    }

    fn append(&self, fingerprint: String, response: Value) -> GatewayResult<()> {
        let mut writer = self.writer.lock().expect("cassette writer lock");
        if self
            .entries
            .read()
            .expect("cassette lock")
            .contains_key(&fingerprint)
        {
            return Ok(());
        }
        if writer.is_none() {
            if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| io_err(&self.path, e))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| io_err(&self.path, e))?;
            *writer = Some(file);
        }
        let entry = CassetteEntry {
            fingerprint: fingerprint.clone(),
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| io_err(&self.path, e))?;
        line.push('\n');
        let file = writer.as_mut().expect("writer opened above");
        file.write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        file.flush().map_err(|e| io_err(&self.path, e))?;
        self.entries
            .write()
            .expect("cassette lock")
            .insert(fingerprint, response);
        Ok(())
    }
}

pub struct CassetteBackend {
    id: String,
    mode: CassetteMode,
    inner: Option<Arc<dyn Backend>>,
    cassette: Cassette,
}

impl CassetteBackend {
    /// Serves only from the cassette. Misses are errors.
    pub fn replay(id: impl Into<String>, cassette: Cassette) -> Self {
        Self {
            id: id.into(),
            mode: CassetteMode::Replay,
            inner: None,
            cassette,
        }
    }

    /// Forwards misses to `inner` and persists the result. Hits are served
    /// from the cassette, so re-recording is incremental.
    pub fn record(inner: Arc<dyn Backend>, cassette: Cassette) -> Self {
        Self {
            id: inner.id().to_owned(),
            mode: CassetteMode::Record,
            inner: Some(inner),
            cassette,
        }
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    fn inner_for(&self, fingerprint: &str) -> GatewayResult<&Arc<dyn Backend>> {
        match (&self.mode, &self.inner) {
            (CassetteMode::Record, Some(inner)) => Ok(inner),
            _ => Err(GatewayError::CassetteMiss {
                fingerprint: fingerprint.to_owned(),
            }),
        }
    }
}

impl Backend for CassetteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> GatewayResult<String> {
        let fp = request.fingerprint();
        if let Some(v) = self.cassette.get(&fp) {
            return v.as_str().map(str::to_owned).ok_or_else(|| {
                GatewayError::Protocol(format!("cassette entry {fp} is not a chat response"))
            });
        }
        let text = self.inner_for(&fp)?.complete(request)?;
        self.cassette.append(fp, Value::String(text.clone()))?;
        Ok(text)
    }

    fn embed(&self, request: &EmbeddingRequest) -> GatewayResult<Vec<Vec<f64>>> {
        let fp = request.fingerprint();
        if let Some(v) = self.cassette.get(&fp) {
            return serde_json::from_value(v)
                .map_err(|e| GatewayError::Protocol(format!("cassette entry {fp}: {e}")));
        }
        let vectors = self.inner_for(&fp)?.embed(request)?;
        let value =
            serde_json::to_value(&vectors).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        self.cassette.append(fp, value)?;
        Ok(vectors)
    }
}
