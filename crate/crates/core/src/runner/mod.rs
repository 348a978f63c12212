//! Multi-model evaluation runs.
//!
//! A run sends every `(window, model, prompt)` triple to its backend and
//! records one [`RunRecord`] per triple. Dispatch is concurrent with a
//! per-model bound; a failing triple yields a record with a failure status and
//! never affects the others. Records are appended to a sink as they complete,
//! and the returned set is sorted by key so completion order is invisible.

mod persona;
mod remote;

pub use persona::{
    applicable_risk_types, approximate_tokens, mock_persona_respond, persona_payload, Boost,
    PersonaRules, SPEED_RISK_MPS,
};
pub use remote::{remote_chat_call, request_body, CallOutcome};

use crate::prompt::{render_prompt, PromptSpec, RenderedPrompt, TemplateError};
use crate::window::ScenarioWindow;
use chrono::{SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const DEFAULT_MAX_PARALLEL: usize = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run needs at least one model")]
    NoModels,
    #[error("model `{model_id}`: {message}")]
    InvalidModelSpec { model_id: String, message: String },
    #[error("model `{model_id}`: credential variable `{variable}` is not set")]
    MissingCredential { model_id: String, variable: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("record sink failed: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RemoteChat,
    RemoteMultimodal,
    MockPersona,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Wait after the `attempt`-th failure (1-based): base * 2^(attempt-1), capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u64::MAX);
        Duration::from_millis(
            self.base_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

fn default_max_parallel() -> usize {
    DEFAULT_MAX_PARALLEL
}

fn default_timeout_s() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_model: Option<String>,
    /// Environment variable holding the bearer credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<PersonaRules>,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Upper bound on request starts per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_s: Option<f64>,
}

impl ModelSpec {
    pub fn mock(model_id: impl Into<String>, persona: PersonaRules) -> Self {
        Self {
            model_id: model_id.into(),
            kind: ModelKind::MockPersona,
            endpoint: None,
            remote_model: None,
            api_key_env: None,
            persona: Some(persona),
            max_parallel: DEFAULT_MAX_PARALLEL,
            timeout_s: default_timeout_s(),
            retry: RetryPolicy::default(),
            rate_limit_per_s: None,
        }
    }

    pub fn remote(
        model_id: impl Into<String>,
        kind: ModelKind,
        endpoint: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            endpoint: Some(endpoint.into()),
            persona: None,
            ..Self::mock(model_id, PersonaRules::moderate())
        }
    }

    /// The three reference personas used by the protocol fixture.
    pub fn reference_personas() -> Vec<ModelSpec> {
        vec![
            Self::mock("persona-conservative", PersonaRules::conservative()),
            Self::mock("persona-moderate", PersonaRules::moderate()),
            Self::mock("persona-tolerant", PersonaRules::tolerant()),
        ]
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let invalid = |message: String| RunError::InvalidModelSpec {
            model_id: self.model_id.clone(),
            message,
        };
        if self.model_id.trim().is_empty() {
            return Err(invalid("model_id must not be empty".into()));
        }
        match self.kind {
            ModelKind::RemoteChat | ModelKind::RemoteMultimodal => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| invalid("remote models require an endpoint".into()))?;
                reqwest::Url::parse(endpoint).map_err(|e| invalid(format!("bad endpoint: {e}")))?;
            }
            ModelKind::MockPersona => {
                self.persona
                    .as_ref()
                    .ok_or_else(|| invalid("mock models require persona rules".into()))?
                    .validate()
                    .map_err(invalid)?;
            }
        }
        if self.max_parallel == 0 {
            return Err(invalid("max_parallel must be positive".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(invalid("timeout_s must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(invalid("retry.max_attempts must be positive".into()));
        }
        if let Some(rate) = self.rate_limit_per_s {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(invalid("rate_limit_per_s must be positive".into()));
            }
        }
        Ok(())
    }

    fn credential(&self) -> Result<Option<String>, RunError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| RunError::MissingCredential {
                    model_id: self.model_id.clone(),
                    variable: var.clone(),
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    TransportError,
    Timeout,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub window_id: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub request_time: String,
    pub latency_ms: u64,
    pub raw_response: String,
    pub token_usage: Option<TokenUsage>,
    pub status: RunStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (&str, &str, &str, &str) {
        (
            &self.run_id,
            &self.window_id,
            &self.model_id,
            &self.prompt_hash,
        )
    }
}

/// Append-only destination for records as they complete.
pub trait RecordSink: Send + Sync {
    fn append(&self, record: &RunRecord) -> io::Result<()>;
}

/// Collects records in memory.
#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<RunRecord>>);

impl MemorySink {
    pub fn into_records(self) -> Vec<RunRecord> {
        self.0.into_inner().expect("sink lock")
    }
}

impl RecordSink for MemorySink {
    fn append(&self, record: &RunRecord) -> io::Result<()> {
        self.0.lock().expect("sink lock").push(record.clone());
        Ok(())
    }
}

/// Appends one JSON line per record; each line is written under one lock.
#[derive(Debug)]
pub struct JsonlSink {
    file: Mutex<File>,
}

impl JsonlSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }
}

impl RecordSink for JsonlSink {
    fn append(&self, record: &RunRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().expect("sink lock");
        file.write_all(&line)?;
        file.flush()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Fresh v4 uuid when absent.
    pub run_id: Option<String>,
    /// Caps every model's concurrency at this value.
    pub parallel: Option<usize>,
    /// Shuffles dispatch order; the resulting record set is unaffected.
    pub shuffle_seed: Option<u64>,
    /// Base directory for resolving image attachments.
    pub image_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    /// Sorted by `(window_id, model_id, prompt_hash)`.
    pub records: Vec<RunRecord>,
}

struct RateGate {
    interval: Duration,
    next: tokio::sync::Mutex<Instant>,
}

impl RateGate {
    fn new(rate_per_s: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / rate_per_s),
            next: tokio::sync::Mutex::new(Instant::now()),
        }
    }

    async fn wait(&self) {
        let wait = {
            let mut next = self.next.lock().await;
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
    }
}

/// Checks every model spec (and credential) before anything is dispatched.
pub fn validate_models(models: &[ModelSpec]) -> Result<(), RunError> {
    if models.is_empty() {
        return Err(RunError::NoModels);
    }
    let mut seen = BTreeSet::new();
    for m in models {
        m.validate()?;
        if !seen.insert(m.model_id.as_str()) {
            return Err(RunError::InvalidModelSpec {
                model_id: m.model_id.clone(),
                message: "duplicate model id".into(),
            });
        }
        m.credential()?;
    }
    Ok(())
}

/// Evaluates every `(window, model, prompt)` triple.
pub async fn execute_run(
    windows: &[ScenarioWindow],
    models: &[ModelSpec],
    prompts: &[PromptSpec],
    options: &RunOptions,
    sink: &dyn RecordSink,
) -> Result<RunOutcome, RunError> {
    validate_models(models)?;
    let credentials: Vec<Option<String>> = models
        .iter()
        .map(ModelSpec::credential)
        .collect::<Result<_, _>>()?;
    let rendered: Vec<Vec<RenderedPrompt>> = windows
        .iter()
        .map(|w| prompts.iter().map(|p| render_prompt(w, p)).collect())
        .collect::<Result<_, _>>()?;

    let run_id = options
        .run_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let semaphores: Vec<Semaphore> = models
        .iter()
        .map(|m| {
            Semaphore::new(
                options
                    .parallel
                    .map_or(m.max_parallel, |p| p.clamp(1, m.max_parallel)),
            )
        })
        .collect();
    let gates: Vec<Option<RateGate>> = models
        .iter()
        .map(|m| m.rate_limit_per_s.map(RateGate::new))
        .collect();
    let client = reqwest::Client::new();

    let mut triples: Vec<(usize, usize, usize)> = Vec::new();
    for w in 0..windows.len() {
        for m in 0..models.len() {
            for p in 0..prompts.len() {
                triples.push((w, m, p));
            }
        }
    }
    if let Some(seed) = options.shuffle_seed {
        triples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let tasks = triples.into_iter().map(|(w, m, p)| {
        let (window, model, prompt) = (&windows[w], &models[m], &rendered[w][p]);
        let (semaphore, gate, credential) = (&semaphores[m], &gates[m], &credentials[m]);
        let (client, run_id) = (&client, &run_id);
        async move {
            let _permit = semaphore.acquire().await.expect("semaphore open");
            if let Some(gate) = gate {
                gate.wait().await;
            }
            let request_time = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
            let started = Instant::now();
            let outcome = match model.kind {
                ModelKind::MockPersona => {
                    let rules = model.persona.as_ref().expect("validated persona");
                    let raw = mock_persona_respond(prompt, window, rules);
                    CallOutcome {
                        status: RunStatus::Ok,
                        token_usage: Some(TokenUsage {
                            prompt_tokens: approximate_tokens(&prompt.text),
                            completion_tokens: approximate_tokens(&raw),
                        }),
                        raw_response: raw,
                        attempts: 1,
                        error: None,
                    }
                }
                ModelKind::RemoteChat | ModelKind::RemoteMultimodal => {
                    remote_chat_call(
                        client,
                        prompt,
                        model,
                        credential.as_deref(),
                        &options.image_root,
                    )
                    .await
                }
            };
            let record = RunRecord {
                run_id: run_id.clone(),
                window_id: window.window_id.clone(),
                model_id: model.model_id.clone(),
                prompt_hash: prompt.prompt_hash.clone(),
                request_time,
                latency_ms: started.elapsed().as_millis() as u64,
                raw_response: outcome.raw_response,
                token_usage: outcome.token_usage,
                status: outcome.status,
                attempts: outcome.attempts,
                error: outcome.error,
            };
            sink.append(&record)?;
            Ok::<_, io::Error>(record)
        }
    });
    let mut records = futures::future::join_all(tasks)
        .await
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(RunOutcome { run_id, records })
}
