//! The normalized scene store.
//!
//! States are keyed by `(acquisition_id, t)` and kept in ascending order, so
//! every read is deterministic. The store is immutable once built; ingest
//! consumes JSONL lines and either produces a complete store or fails with the
//! first offending line.

use crate::scene::SceneState;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::ops::Bound;
use std::path::Path;
use thiserror::Error;

/// File holding the canonical state snapshot inside a store directory.
pub const STATES_FILE: &str = "states.jsonl";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}:{line}: malformed record at `{path}`: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        path: String,
        message: String,
    },
    #[error("{source_name}:{line}: duplicate key (acq={acquisition_id}, t={t})")]
    DuplicateKey {
        source_name: String,
        line: usize,
        acquisition_id: String,
        t: i64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown acquisition `{0}`")]
    UnknownAcquisition(String),
    #[error("state (acq={acquisition_id}, t={t}) not in store")]
    StateNotFound { acquisition_id: String, t: i64 },
    #[error("invalid range: t_from {from} > t_to {to}")]
    InvertedRange { from: i64, to: i64 },
}

/// Per-acquisition summary, as listed by the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcquisitionSummary {
    pub acquisition_id: String,
    pub states: usize,
    pub t_min: i64,
    pub t_max: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneStore {
    acquisitions: BTreeMap<String, BTreeMap<i64, SceneState>>,
}

impl SceneStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a store from one JSONL source.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut store = Self::new();
        store.ingest_source("<input>", reader)?;
        Ok(store)
    }

    pub fn ingest_str(input: &str) -> Result<Self, IngestError> {
        Self::ingest(input.as_bytes())
    }

    /// Adds the lines of one more source. Lines may arrive in any order;
    /// a key already present (from this or an earlier source) is an error.
    pub fn ingest_source<R: BufRead>(
        &mut self,
        source_name: &str,
        reader: R,
    ) -> Result<(), IngestError> {
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let state = parse_line(&line).map_err(|(path, message)| IngestError::Malformed {
                source_name: source_name.to_string(),
                line: line_no,
                path,
                message,
            })?;
            self.insert(state)
                .map_err(|state| IngestError::DuplicateKey {
                    source_name: source_name.to_string(),
                    line: line_no,
                    acquisition_id: state.acquisition_id,
                    t: state.t,
                })?;
        }
        Ok(())
    }

    fn insert(&mut self, state: SceneState) -> Result<(), SceneState> {
        let per_acq = self
            .acquisitions
            .entry(state.acquisition_id.clone())
            .or_default();
        if per_acq.contains_key(&state.t) {
            return Err(state);
        }
        per_acq.insert(state.t, state);
        Ok(())
    }

    /// Opens a store directory written by [`SceneStore::save`].
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        let path = dir.join(STATES_FILE);
        let file = fs::File::open(&path)?;
        let mut store = Self::new();
        store.ingest_source(&path.display().to_string(), BufReader::new(file))?;
        Ok(store)
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(STATES_FILE), self.snapshot())
    }

    /// Canonical serialization: one state per line in ascending
    /// `(acquisition_id, t)` order.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for state in self.iter() {
            serde_json::to_writer(&mut out, state).expect("scene state serializes");
            out.write_all(b"\n").expect("vec write");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.acquisitions.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All states in ascending `(acquisition_id, t)` order.
    pub fn iter(&self) -> impl Iterator<Item = &SceneState> {
        self.acquisitions.values().flat_map(BTreeMap::values)
    }

    pub fn acquisitions(&self) -> Vec<AcquisitionSummary> {
        self.acquisitions
            .iter()
            .filter_map(|(id, states)| {
                let t_min = *states.keys().next()?;
                let t_max = *states.keys().next_back()?;
                Some(AcquisitionSummary {
                    acquisition_id: id.clone(),
                    states: states.len(),
                    t_min,
                    t_max,
                })
            })
            .collect()
    }

    pub fn contains(&self, acquisition_id: &str, t: i64) -> bool {
        self.get(acquisition_id, t).is_some()
    }

    pub fn get(&self, acquisition_id: &str, t: i64) -> Option<&SceneState> {
        self.acquisitions.get(acquisition_id)?.get(&t)
    }

    /// States of one acquisition with `t` in `[t_from, t_to]`, ascending.
    /// Missing seconds are simply absent.
    pub fn get_states(
        &self,
        acquisition_id: &str,
        t_from: i64,
        t_to: i64,
    ) -> Result<Vec<&SceneState>, StoreError> {
        if t_from > t_to {
            return Err(StoreError::InvertedRange {
                from: t_from,
                to: t_to,
            });
        }
        let states = self
            .acquisitions
            .get(acquisition_id)
            .ok_or_else(|| StoreError::UnknownAcquisition(acquisition_id.to_string()))?;
        Ok(states
            .range((Bound::Included(t_from), Bound::Included(t_to)))
            .map(|(_, s)| s)
            .collect())
    }
}

fn parse_line(line: &str) -> Result<SceneState, (String, String)> {
    let mut de = serde_json::Deserializer::from_str(line);
    let mut state: SceneState = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        (path, e.into_inner().to_string())
    })?;
    de.end().map_err(|e| (".".to_string(), e.to_string()))?;
    state.normalize();
    state.validate().map_err(|v| (v.path, v.message))?;
    Ok(state)
}
