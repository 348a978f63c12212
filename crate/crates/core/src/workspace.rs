//! On-disk layout shared by the CLI and the service.
//!
//! ```text
//! <root>/states.jsonl
//! <root>/collections/<collection_id>.json
//! <root>/runs/<run_id>/{manifest,models,status}.json
//! <root>/runs/<run_id>/{records,assessments,rejections}.jsonl
//! ```
//!
//! Documents are written to a temporary file and renamed into place, so a
//! reader never sees a half-written collection or status.

use crate::analysis::AnalysisConfig;
use crate::parser::{parse_assessment, ParseRejection, RiskAssessment};
use crate::prompt::{PromptSpec, TemplateError};
use crate::report::{build_report, Report, ReportError};
use crate::runner::{
    execute_run, validate_models, JsonlSink, ModelSpec, RunError, RunOptions, RunRecord, RunStatus,
};
use crate::store::{IngestError, SceneStore, STATES_FILE};
use crate::window::{consume_collection, Collection, ScenarioWindow, WindowError};
use chrono::{SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const COLLECTIONS_DIR: &str = "collections";
pub const RUNS_DIR: &str = "runs";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODELS_FILE: &str = "models.json";
pub const STATUS_FILE: &str = "status.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ASSESSMENTS_FILE: &str = "assessments.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("no scene store at {0}")]
    MissingStore(PathBuf),
    #[error("collection `{0}` not found")]
    CollectionNotFound(String),
    #[error("collection `{0}` already exists")]
    CollectionExists(String),
    #[error("collection `{0}` has no windows")]
    EmptyCollection(String),
    #[error("run `{0}` not found")]
    RunNotFound(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ids become path components, so only a conservative alphabet is allowed.
fn check_id(id: &str) -> Result<(), WorkspaceError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(WorkspaceError::InvalidId(id.to_string()))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, WorkspaceError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| WorkspaceError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkspaceError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("document serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, WorkspaceError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| WorkspaceError::Json {
                path: path.to_path_buf(),
                source,
            })?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), WorkspaceError> {
    let mut bytes = Vec::new();
    for v in values {
        serde_json::to_writer(&mut bytes, v).expect("line serializes");
        bytes.write_all(b"\n").expect("vec write");
    }
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatusDoc {
    pub run_id: String,
    pub state: RunState,
    /// Planned `(window, model)` calls.
    pub total_calls: usize,
    /// Record counts by call status, once complete.
    #[serde(default)]
    pub records: BTreeMap<RunStatus, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub collection_id: String,
    pub prompt: String,
    pub prompt_hash: String,
    pub window_ids: Vec<String>,
    pub created_at: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub collection_id: String,
    pub models: Vec<ModelSpec>,
    /// Prompt spec name, e.g. `fixed_standard`.
    pub prompt: String,
    pub parallel: Option<usize>,
    pub run_id: Option<String>,
    pub shuffle_seed: Option<u64>,
}

/// A validated run whose directory exists but whose calls have not started.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub manifest: RunManifest,
    windows: Vec<ScenarioWindow>,
    models: Vec<ModelSpec>,
    prompt: PromptSpec,
    options: RunOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRun {
    pub assessments: Vec<RiskAssessment>,
    pub rejections: Vec<ParseRejection>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Opens an existing store directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        if !root.join(STATES_FILE).is_file() {
            return Err(WorkspaceError::MissingStore(root));
        }
        Ok(Self { root })
    }

    /// Writes `store` into `root`, creating the directory if needed.
    pub fn init(root: impl Into<PathBuf>, store: &SceneStore) -> Result<Self, WorkspaceError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        store.save(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load_store(&self) -> Result<SceneStore, WorkspaceError> {
        Ok(SceneStore::open(&self.root)?)
    }

    fn collection_path(&self, id: &str) -> Result<PathBuf, WorkspaceError> {
        check_id(id)?;
        Ok(self.root.join(COLLECTIONS_DIR).join(format!("{id}.json")))
    }

    pub fn list_collections(&self) -> Result<Vec<String>, WorkspaceError> {
        list_entries(&self.root.join(COLLECTIONS_DIR), |name| {
            name.strip_suffix(".json")
        })
    }

    pub fn load_collection(&self, id: &str) -> Result<Collection, WorkspaceError> {
        let path = self.collection_path(id)?;
        if !path.is_file() {
            return Err(WorkspaceError::CollectionNotFound(id.to_string()));
        }
        read_json(&path)
    }

    pub fn save_collection(&self, collection: &Collection) -> Result<(), WorkspaceError> {
        let path = self.collection_path(&collection.collection_id)?;
        let dir = path.parent().expect("collection dir");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&path, collection)
    }

    pub fn create_collection(&self, name: &str) -> Result<Collection, WorkspaceError> {
        let collection = Collection::new(name)?;
        if self.collection_path(&collection.collection_id)?.exists() {
            return Err(WorkspaceError::CollectionExists(collection.collection_id));
        }
        self.save_collection(&collection)?;
        Ok(collection)
    }

    /// The collection, or a new empty one when it does not exist yet.
    pub fn load_or_create_collection(&self, name: &str) -> Result<Collection, WorkspaceError> {
        let collection = Collection::new(name)?;
        match self.load_collection(&collection.collection_id) {
            Err(WorkspaceError::CollectionNotFound(_)) => Ok(collection),
            other => other,
        }
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf, WorkspaceError> {
        check_id(run_id)?;
        let dir = self.root.join(RUNS_DIR).join(run_id);
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(WorkspaceError::RunNotFound(run_id.to_string()));
        }
        Ok(dir)
    }

    pub fn list_runs(&self) -> Result<Vec<String>, WorkspaceError> {
        list_entries(&self.root.join(RUNS_DIR), |name| Some(name))
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, WorkspaceError> {
        read_json(&self.run_dir(run_id)?.join(MANIFEST_FILE))
    }

    pub fn load_models(&self, run_id: &str) -> Result<Vec<ModelSpec>, WorkspaceError> {
        read_json(&self.run_dir(run_id)?.join(MODELS_FILE))
    }

    pub fn load_status(&self, run_id: &str) -> Result<RunStatusDoc, WorkspaceError> {
        read_json(&self.run_dir(run_id)?.join(STATUS_FILE))
    }

    /// Records sorted by `(window_id, model_id, prompt_hash)`.
    pub fn load_records(&self, run_id: &str) -> Result<Vec<RunRecord>, WorkspaceError> {
        let path = self.run_dir(run_id)?.join(RECORDS_FILE);
        let mut records: Vec<RunRecord> = if path.exists() {
            read_jsonl(&path)?
        } else {
            Vec::new()
        };
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(records)
    }

    /// Validates a run request and creates its directory with status `queued`.
    pub fn prepare_run(&self, request: &RunRequest) -> Result<PreparedRun, WorkspaceError> {
        let collection = self.load_collection(&request.collection_id)?;
        if collection.window_ids.is_empty() {
            return Err(WorkspaceError::EmptyCollection(collection.collection_id));
        }
        let store = self.load_store()?;
        let windows = consume_collection(&collection, &store)?;
        let prompt = PromptSpec::resolve(&request.prompt)?;
        validate_models(&request.models)?;

        let run_id = request
            .run_id
            .clone()
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        check_id(&run_id)?;
        let dir = self.root.join(RUNS_DIR).join(&run_id);
        if dir.exists() {
            return Err(WorkspaceError::RunExists(run_id));
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let manifest = RunManifest {
            run_id: run_id.clone(),
            collection_id: collection.collection_id.clone(),
            prompt: request.prompt.clone(),
            prompt_hash: prompt.prompt_hash.clone(),
            window_ids: collection.window_ids.clone(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        write_json(&dir.join(MODELS_FILE), &request.models)?;
        write_json(
            &dir.join(STATUS_FILE),
            &RunStatusDoc {
                run_id: run_id.clone(),
                state: RunState::Queued,
                total_calls: windows.len() * request.models.len(),
                records: BTreeMap::new(),
                error: None,
            },
        )?;
        // The manifest marks the run as existing, so it goes last.
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;

        Ok(PreparedRun {
            manifest,
            windows,
            models: request.models.clone(),
            prompt,
            options: RunOptions {
                run_id: Some(run_id),
                parallel: request.parallel,
                shuffle_seed: request.shuffle_seed,
                image_root: self.root.clone(),
            },
        })
    }

    /// Executes a prepared run, then parses its records. The status document
    /// ends as `complete` or `failed`.
    pub async fn execute_prepared(
        &self,
        prepared: PreparedRun,
    ) -> Result<RunStatusDoc, WorkspaceError> {
        let run_id = prepared.manifest.run_id.clone();
        let dir = self.root.join(RUNS_DIR).join(&run_id);
        let total_calls = prepared.windows.len() * prepared.models.len();
        let mut status = RunStatusDoc {
            run_id: run_id.clone(),
            state: RunState::Running,
            total_calls,
            records: BTreeMap::new(),
            error: None,
        };
        write_json(&dir.join(STATUS_FILE), &status)?;

        let result = async {
            let records_path = dir.join(RECORDS_FILE);
            let sink = JsonlSink::open(&records_path).map_err(io_err(&records_path))?;
            let outcome = execute_run(
                &prepared.windows,
                &prepared.models,
                std::slice::from_ref(&prepared.prompt),
                &prepared.options,
                &sink,
            )
            .await?;
            self.parse_run(&run_id)?;
            Ok::<_, WorkspaceError>(outcome)
        }
        .await;

        match result {
            Ok(outcome) => {
                for r in &outcome.records {
                    *status.records.entry(r.status).or_default() += 1;
                }
                status.state = RunState::Complete;
                write_json(&dir.join(STATUS_FILE), &status)?;
                Ok(status)
            }
            Err(e) => {
                status.state = RunState::Failed;
                status.error = Some(e.to_string());
                write_json(&dir.join(STATUS_FILE), &status)?;
                Err(e)
            }
        }
    }

    pub async fn run(&self, request: &RunRequest) -> Result<RunStatusDoc, WorkspaceError> {
        let prepared = self.prepare_run(request)?;
        self.execute_prepared(prepared).await
    }

    /// Parses every `ok` record and rewrites the run's assessment and
    /// rejection files, both sorted by `(window_id, model_id)`.
    pub fn parse_run(&self, run_id: &str) -> Result<ParsedRun, WorkspaceError> {
        let dir = self.run_dir(run_id)?;
        let mut parsed = ParsedRun {
            assessments: Vec::new(),
            rejections: Vec::new(),
        };
        for record in self.load_records(run_id)? {
            match parse_assessment(&record) {
                Some(Ok(a)) => parsed.assessments.push(a),
                Some(Err(r)) => parsed.rejections.push(r),
                None => {}
            }
        }
        write_jsonl(&dir.join(ASSESSMENTS_FILE), &parsed.assessments)?;
        write_jsonl(&dir.join(REJECTIONS_FILE), &parsed.rejections)?;
        Ok(parsed)
    }

    pub fn report(&self, run_id: &str, config: &AnalysisConfig) -> Result<Report, WorkspaceError> {
        let manifest = self.load_manifest(run_id)?;
        let records = self.load_records(run_id)?;
        Ok(build_report(&manifest.window_ids, &records, config)?)
    }
}

fn list_entries(
    dir: &Path,
    name_of: fn(&str) -> Option<&str>,
) -> Result<Vec<String>, WorkspaceError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(name) = entry.file_name().to_str().and_then(name_of) {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}
