//! Chat-completion client for remote backends.
//!
//! One single-turn request per call at temperature 0. Transient failures
//! (connection errors, timeouts, 429 and 5xx) are retried with capped
//! exponential backoff; other client errors end the call immediately.

use super::{ModelKind, ModelSpec, RunStatus, TokenUsage};
use crate::prompt::RenderedPrompt;
use base64::Engine as _;
use serde_json::{json, Value};
use std::path::Path;
use std::time::Duration;
use tracing::warn;

/// Result of one remote call, after retries.
#[derive(Debug, Clone, PartialEq)]
pub struct CallOutcome {
    pub status: RunStatus,
    pub raw_response: String,
    pub token_usage: Option<TokenUsage>,
    pub attempts: u32,
    pub error: Option<String>,
}

impl CallOutcome {
    fn failed(status: RunStatus, attempts: u32, error: String) -> Self {
        Self {
            status,
            raw_response: String::new(),
            token_usage: None,
            attempts,
            error: Some(error),
        }
    }
}

fn image_part(path: &Path) -> std::io::Result<Value> {
    let bytes = std::fs::read(path)?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/jpeg",
    };
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(json!({
        "type": "image_url",
        "image_url": { "url": format!("data:{mime};base64,{data}") }
    }))
}

/// Request body for a chat-completion style endpoint.
pub fn request_body(
    prompt: &RenderedPrompt,
    spec: &ModelSpec,
    image_root: &Path,
) -> std::io::Result<Value> {
    let content = if spec.kind == ModelKind::RemoteMultimodal && !prompt.attachments.is_empty() {
        let mut parts = vec![json!({ "type": "text", "text": prompt.text })];
        for attachment in &prompt.attachments {
            parts.push(image_part(&image_root.join(attachment))?);
        }
        Value::Array(parts)
    } else {
        Value::String(prompt.text.clone())
    };
    Ok(json!({
        "model": spec.remote_model.as_deref().unwrap_or(&spec.model_id),
        "messages": [{ "role": "user", "content": content }],
        "temperature": 0
    }))
}

fn extract(body: &Value) -> Option<(String, Option<TokenUsage>)> {
    let content = body
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()?
        .to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Some((content, usage))
}

/// Sends `prompt` to the model endpoint, retrying per the model's policy.
pub async fn remote_chat_call(
    client: &reqwest::Client,
    prompt: &RenderedPrompt,
    spec: &ModelSpec,
    api_key: Option<&str>,
    image_root: &Path,
) -> CallOutcome {
    let Some(endpoint) = spec.endpoint.as_deref() else {
        return CallOutcome::failed(
            RunStatus::TransportError,
            0,
            "no endpoint configured".into(),
        );
    };
    let body = match request_body(prompt, spec, image_root) {
        Ok(b) => b,
        Err(e) => {
            return CallOutcome::failed(
                RunStatus::TransportError,
                0,
                format!("attachment unreadable: {e}"),
            )
        }
    };
    let timeout = Duration::from_secs_f64(spec.timeout_s);
    let max_attempts = spec.retry.max_attempts.max(1);

    let mut last = CallOutcome::failed(RunStatus::TransportError, 0, "not attempted".into());
    for attempt in 1..=max_attempts {
        let mut request = client.post(endpoint).timeout(timeout).json(&body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let retryable = match request.send().await {
            Ok(response) => {
                let status = response.status();
                match response.text().await {
                    Ok(text) if status.is_success() => {
                        let parsed = serde_json::from_str::<Value>(&text).ok();
                        return match parsed.as_ref().and_then(extract) {
                            Some((content, usage)) => CallOutcome {
                                status: RunStatus::Ok,
                                raw_response: content,
                                token_usage: usage,
                                attempts: attempt,
                                error: None,
                            },
                            None => CallOutcome {
                                status: RunStatus::Refused,
                                raw_response: text,
                                token_usage: None,
                                attempts: attempt,
                                error: Some("response carries no message content".into()),
                            },
                        };
                    }
                    Ok(text) => {
                        let transient = status.is_server_error() || status.as_u16() == 429;
                        last = CallOutcome {
                            status: if transient {
                                RunStatus::TransportError
                            } else {
                                RunStatus::Refused
                            },
                            raw_response: text,
                            token_usage: None,
                            attempts: attempt,
                            error: Some(format!("HTTP {status}")),
                        };
                        transient
                    }
                    Err(e) => {
                        last = classify(e, attempt);
                        true
                    }
                }
            }
            Err(e) => {
                last = classify(e, attempt);
                true
            }
        };
        if !retryable {
            return last;
        }
        if attempt < max_attempts {
            let delay = spec.retry.delay(attempt);
            warn!(model = %spec.model_id, attempt, ?delay, error = ?last.error, "retrying remote call");
            tokio::time::sleep(delay).await;
        }
    }
    last
}

fn classify(e: reqwest::Error, attempt: u32) -> CallOutcome {
    let status = if e.is_timeout() {
        RunStatus::Timeout
    } else {
        RunStatus::TransportError
    };
    CallOutcome::failed(status, attempt, e.to_string())
}
