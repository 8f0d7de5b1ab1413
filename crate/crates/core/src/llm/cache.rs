//! Persistent response cache keyed by the full request. Entries live in an
//! append-only JSONL file so interrupted experiments resume without repaying
//! for completions. Get-or-insert is atomic: concurrent identical requests
//! produce at most one backend call (single flight). Disk problems are
//! reported as warnings and never fail a request.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, LlmError};

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    response: String,
}

#[derive(Default)]
struct CacheState {
    entries: HashMap<String, String>,
    in_flight: HashSet<String>,
}

pub struct ResponseCache {
    state: Mutex<CacheState>,
    filled: Condvar,
    path: Option<PathBuf>,
}

impl ResponseCache {
    /// Volatile cache with no disk persistence.
    pub fn in_memory() -> Self {
        ResponseCache {
            state: Mutex::new(CacheState::default()),
            filled: Condvar::new(),
            path: None,
        }
    }

    /// Cache backed by `<dir>/cache.jsonl`, loading any existing entries.
    pub fn open(dir: &Path) -> Self {
        let path = dir.join("cache.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            match File::open(&path) {
                Ok(file) => {
                    for (idx, line) in BufReader::new(file).lines().enumerate() {
                        let Ok(line) = line else { break };
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<CacheRecord>(&line) {
                            Ok(record) => {
                                entries.insert(record.key, record.response);
                            }
                            Err(e) => {
                                eprintln!(
                                    "warning: skipping malformed cache line {} in {}: {e}",
                                    idx + 1,
                                    path.display()
                                );
                            }
                        }
                    }
                }
                Err(e) => {
                    eprintln!("warning: cannot read cache {}: {e}", path.display());
                }
            }
        } else if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("warning: cannot create cache dir {}: {e}", dir.display());
        }
        ResponseCache {
            state: Mutex::new(CacheState {
                entries,
                in_flight: HashSet::new(),
            }),
            filled: Condvar::new(),
            path: Some(path),
        }
    }

    /// Cache key: SHA-256 over the canonical JSON of the whole request, so
    /// every field (model, texts, temperature, max_tokens) participates.
    pub fn key_of(request: &ChatRequest) -> String {
        let canonical = serde_json::to_string(request).expect("request serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Return the cached response for `key`, or run `compute` exactly once
    /// across all threads asking for the same key. The boolean is true for
    /// a cache hit.
    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<String, LlmError>,
    ) -> Result<(String, bool), LlmError> {
        let mut state = self.state.lock().unwrap();
        loop {
            if let Some(response) = state.entries.get(key) {
                return Ok((response.clone(), true));
            }
            if state.in_flight.contains(key) {
                state = self.filled.wait(state).unwrap();
                continue;
            }
            state.in_flight.insert(key.to_string());
            break;
        }
        drop(state);

        let result = compute();

        let mut state = self.state.lock().unwrap();
        state.in_flight.remove(key);
        if let Ok(response) = &result {
            state.entries.insert(key.to_string(), response.clone());
            self.append(key, response);
        }
        drop(state);
        self.filled.notify_all();
        result.map(|response| (response, false))
    }

    fn append(&self, key: &str, response: &str) {
        let Some(path) = &self.path else { return };
        let record = CacheRecord {
            key: key.to_string(),
            response: response.to_string(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let write = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut file| writeln!(file, "{line}"));
        if let Err(e) = write {
            eprintln!("warning: cache append to {} failed: {e}", path.display());
        }
    }
}
