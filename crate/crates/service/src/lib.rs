//! HTTP facade over an audit store directory.
//!
//! Reads go to an in-memory snapshot of the scene store, which is immutable
//! once ingested. Collection mutations are serialized per collection id and
//! persisted before the response is sent. Runs execute in the background
//! through the same workspace code path as the CLI; clients poll their status.

mod error;

pub use error::{ApiError, ErrorCode};

use audit_core::analysis::AnalysisConfig;
use audit_core::query::{execute_query, ScenarioQuery};
use audit_core::report::{HEATMAP_CSV, UNCERTAINTY_CSV};
use audit_core::runner::ModelSpec;
use audit_core::window::{Anchor, DEFAULT_POST_S, DEFAULT_PRE_S};
use audit_core::workspace::{RunRequest, RunState, RunStatusDoc, WorkspaceError};
use audit_core::{Collection, SceneStore, Workspace};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use thiserror::Error;
use tokio::net::TcpListener;
use tracing::{error, info};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

struct AppState {
    workspace: Workspace,
    store: SceneStore,
    collection_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    fn collection_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.collection_locks
            .lock()
            .expect("lock table")
            .entry(id.to_string())
            .or_default()
            .clone()
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

/// Router over an opened workspace; the store is loaded once.
pub fn app(workspace: Workspace) -> Result<Router, ServiceError> {
    let store = workspace.load_store()?;
    let state = Arc::new(AppState {
        workspace,
        store,
        collection_locks: Mutex::default(),
    });
    Ok(Router::new()
        .route("/acquisitions", get(list_acquisitions))
        .route("/acquisitions/{id}/states", get(get_states))
        .route("/queries", post(run_query))
        .route(
            "/collections",
            get(list_collections).post(create_collection),
        )
        .route("/collections/{id}", get(get_collection))
        .route("/collections/{id}/anchors", post(add_anchors))
        .route("/collections/{id}/windows", post(build_windows))
        .route("/runs", get(list_runs).post(launch_run))
        .route("/runs/{id}/status", get(run_status))
        .route("/runs/{id}/report", get(run_report))
        .route("/runs/{id}/uncertainty", get(run_uncertainty))
        .route("/runs/{id}/heatmap", get(run_heatmap))
        .with_state(state))
}

/// Serves on an already bound listener until the process ends.
pub async fn serve_on(listener: TcpListener, workspace: Workspace) -> Result<(), ServiceError> {
    let router = app(workspace)?;
    axum::serve(listener, router)
        .await
        .map_err(ServiceError::Serve)
}

/// Opens the store at `store_dir` and serves it on `bind`.
pub async fn serve(store_dir: impl Into<PathBuf>, bind: &str) -> Result<(), ServiceError> {
    let workspace = Workspace::open(store_dir)?;
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: bind.to_string(),
            source,
        })?;
    let addr: SocketAddr = listener.local_addr().map_err(ServiceError::Serve)?;
    info!(%addr, store = %workspace.root().display(), "serving");
    serve_on(listener, workspace).await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::invalid(e.into_inner().to_string()).at(path)
    })
}

fn text(content_type: &'static str, body: String) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

async fn list_acquisitions(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.store.acquisitions())
}

fn int_param(params: &HashMap<String, String>, name: &str) -> ApiResult<Option<i64>> {
    params
        .get(name)
        .map(|v| {
            v.parse().map_err(|_| {
                ApiError::invalid(format!("`{name}` must be an integer second")).at(name)
            })
        })
        .transpose()
}

async fn get_states(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let summary = s
        .store
        .acquisitions()
        .into_iter()
        .find(|a| a.acquisition_id == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown acquisition `{id}`")))?;
    let from = int_param(&params, "from")?.unwrap_or(summary.t_min);
    let to = int_param(&params, "to")?.unwrap_or(summary.t_max);
    let states = s.store.get_states(&id, from, to)?;
    Ok(Json(states).into_response())
}

async fn run_query(State(s): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let query: ScenarioQuery = parse_body(&body)?;
    Ok(Json(execute_query(&s.store, &query)?).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewCollection {
    name: String,
}

async fn list_collections(State(s): State<Shared>) -> ApiResult<Response> {
    Ok(Json(s.workspace.list_collections()?).into_response())
}

async fn create_collection(State(s): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: NewCollection = parse_body(&body)?;
    let id = Collection::new(&req.name)
        .map_err(ApiError::from)?
        .collection_id;
    let lock = s.collection_lock(&id);
    let _guard = lock.lock().await;
    let collection = s.workspace.create_collection(&req.name)?;
    Ok((StatusCode::CREATED, Json(collection)).into_response())
}

async fn get_collection(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.workspace.load_collection(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewAnchors {
    anchors: Vec<Anchor>,
}

async fn add_anchors(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: NewAnchors = parse_body(&body)?;
    for (i, a) in req.anchors.iter().enumerate() {
        if !s.store.contains(&a.acquisition_id, a.t0) {
            return Err(ApiError::invalid(format!(
                "anchor (acq={}, t0={}) not found in store",
                a.acquisition_id, a.t0
            ))
            .at(format!("anchors[{i}]")));
        }
    }
    let lock = s.collection_lock(&id);
    let _guard = lock.lock().await;
    let mut collection = s.workspace.load_collection(&id)?;
    for a in req.anchors {
        if !collection.anchors.contains(&a) {
            collection.anchors.push(a);
        }
    }
    s.workspace.save_collection(&collection)?;
    Ok(Json(collection).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowExtents {
    #[serde(default = "default_pre")]
    k: i64,
    #[serde(default = "default_post")]
    m: i64,
}

fn default_pre() -> i64 {
    DEFAULT_PRE_S
}

fn default_post() -> i64 {
    DEFAULT_POST_S
}

async fn build_windows(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let extents: WindowExtents = if body.is_empty() {
        WindowExtents {
            k: DEFAULT_PRE_S,
            m: DEFAULT_POST_S,
        }
    } else {
        parse_body(&body)?
    };
    let lock = s.collection_lock(&id);
    let _guard = lock.lock().await;
    let mut collection = s.workspace.load_collection(&id)?;
    collection.expand_anchors(&s.store, extents.k, extents.m)?;
    s.workspace.save_collection(&collection)?;
    Ok(Json(collection).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewRun {
    collection_id: String,
    #[serde(default)]
    models: Option<Vec<ModelSpec>>,
    /// Path of a model-spec file, relative to the store directory.
    #[serde(default)]
    models_file: Option<PathBuf>,
    #[serde(default = "default_prompt")]
    prompt: String,
    #[serde(default)]
    parallel: Option<usize>,
}

fn default_prompt() -> String {
    "fixed_standard".to_string()
}

#[derive(Debug, Serialize)]
struct RunAccepted {
    run_id: String,
    status: RunStatusDoc,
}

async fn launch_run(State(s): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: NewRun = parse_body(&body)?;
    let models = match (req.models, req.models_file) {
        (Some(models), None) => models,
        (None, Some(file)) => {
            let path = s.workspace.root().join(file);
            let bytes = std::fs::read(&path).map_err(|e| {
                ApiError::invalid(format!("{}: {e}", path.display())).at("models_file")
            })?;
            serde_json::from_slice(&bytes).map_err(|e| {
                ApiError::invalid(format!("{}: {e}", path.display())).at("models_file")
            })?
        }
        _ => {
            return Err(
                ApiError::invalid("give exactly one of `models` and `models_file`").at("models"),
            )
        }
    };
    let request = RunRequest {
        collection_id: req.collection_id,
        models,
        prompt: req.prompt,
        parallel: req.parallel,
        ..Default::default()
    };
    let prepared = s.workspace.prepare_run(&request)?;
    let run_id = prepared.manifest.run_id.clone();
    let status = s.workspace.load_status(&run_id)?;
    let state = s.clone();
    tokio::spawn(async move {
        let run_id = prepared.manifest.run_id.clone();
        if let Err(e) = state.workspace.execute_prepared(prepared).await {
            error!(%run_id, error = %e, "run failed");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(RunAccepted { run_id, status })).into_response())
}

async fn list_runs(State(s): State<Shared>) -> ApiResult<Response> {
    Ok(Json(s.workspace.list_runs()?).into_response())
}

async fn run_status(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.workspace.load_status(&id)?).into_response())
}

fn completed_report(s: &AppState, id: &str) -> ApiResult<audit_core::report::Report> {
    let status = s.workspace.load_status(id)?;
    if status.state != RunState::Complete {
        return Err(ApiError::conflict(format!(
            "run `{id}` is {:?}, not complete",
            status.state
        )));
    }
    Ok(s.workspace.report(id, &AnalysisConfig::default())?)
}

async fn run_report(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = completed_report(&s, &id)?;
    Ok(text("application/json", report.to_json()))
}

#[derive(Debug, Deserialize)]
struct Format {
    #[serde(default)]
    format: Option<String>,
}

fn wants_csv(f: &Format) -> ApiResult<bool> {
    match f.format.as_deref() {
        None | Some("json") => Ok(false),
        Some("csv") => Ok(true),
        Some(other) => Err(ApiError::invalid(format!("unknown format `{other}`")).at("format")),
    }
}

async fn run_uncertainty(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(format): Query<Format>,
) -> ApiResult<Response> {
    let csv = wants_csv(&format)?;
    let report = completed_report(&s, &id)?;
    if csv {
        let tables = report.csv_tables().map_err(WorkspaceError::from)?;
        return Ok(text("text/csv", tables[UNCERTAINTY_CSV].clone()));
    }
    Ok(Json(serde_json::json!({
        "rows": report.uncertainty,
        "tiers": report.tiers,
        "unscored_windows": report.unscored_windows,
    }))
    .into_response())
}

async fn run_heatmap(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(format): Query<Format>,
) -> ApiResult<Response> {
    let csv = wants_csv(&format)?;
    let report = completed_report(&s, &id)?;
    if csv {
        let tables = report.csv_tables().map_err(WorkspaceError::from)?;
        return Ok(text("text/csv", tables[HEATMAP_CSV].clone()));
    }
    Ok(Json(report.heatmap).into_response())
}
