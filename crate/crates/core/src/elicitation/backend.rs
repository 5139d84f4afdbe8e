use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde_json::{json, Value};

use crate::corpus::{Dimension, ItemRef};

use super::prompt::PromptSpec;
use super::record::Candidate;
use super::ElicitationParams;

/// Environment variable holding the endpoint bearer token.
pub const API_KEY_ENV: &str = "NORMFORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Retryable,
    Protocol,
    Credential,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Credential(String),
}

impl BackendError {
    pub fn class(&self) -> ErrorClass {
        match self {
            BackendError::Transport(_) => ErrorClass::Retryable,
            BackendError::Status { status, .. } => match status {
                401 | 403 => ErrorClass::Credential,
                408 | 429 => ErrorClass::Retryable,
                s if *s >= 500 => ErrorClass::Retryable,
                _ => ErrorClass::Protocol,
            },
            BackendError::Protocol(_) => ErrorClass::Protocol,
            BackendError::Credential(_) => ErrorClass::Credential,
        }
    }
}

pub struct QueryRequest<'a> {
    pub params: &'a ElicitationParams,
    pub prompt: &'a PromptSpec,
    pub item: ItemRef,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    /// Alternatives for the first output token, any order.
    pub candidates: Vec<Candidate>,
    pub raw: String,
}

pub trait Backend: Send + Sync {
    fn query(&self, request: &QueryRequest<'_>) -> Result<BackendResponse, BackendError>;

    /// Timestamp stamped on new records.
    fn timestamp(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Capped exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub const NONE: RetryPolicy = RetryPolicy {
        base: Duration::ZERO,
        cap: Duration::ZERO,
    };

    /// Upper bound of the wait before retry number `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(20));
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ceiling = self.ceiling(attempt);
        if ceiling.is_zero() {
            return ceiling;
        }
        ceiling.mul_f64(rand::rng().random_range(0.0..=1.0))
    }
}

/// Chat-completions client speaking the common JSON schema.
pub struct LiveBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent,
        }
    }

    /// Read the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(Self::new(endpoint, k.trim(), timeout)),
            _ => Err(BackendError::Credential(format!("{API_KEY_ENV} is not set"))),
        }
    }

    pub fn request_body(request: &QueryRequest<'_>) -> Value {
        let p = request.params;
        json!({
            "model": p.model_name,
            "messages": request.prompt.messages(),
            "temperature": p.temperature,
            "max_tokens": p.max_output_tokens,
            "logprobs": true,
            "top_logprobs": p.top_logprob_count,
        })
    }
}

/// Pull the first token's top alternatives out of a chat-completions body.
pub fn parse_completion(body: &str) -> Result<Vec<Candidate>, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    let top = v
        .pointer("/choices/0/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| BackendError::Protocol("endpoint returned no logprobs".into()))?;
    top.iter()
        .map(|entry| {
            let token = entry.get("token").and_then(Value::as_str);
            let lp = entry.get("logprob").and_then(Value::as_f64);
            match (token, lp) {
                // servers occasionally report 0 as a tiny positive float
                (Some(t), Some(lp)) if lp.is_finite() => Ok(Candidate::new(t, lp.min(0.0))),
                _ => Err(BackendError::Protocol(format!("malformed top_logprobs entry: {entry}"))),
            }
        })
        .collect()
}

impl Backend for LiveBackend {
    fn query(&self, request: &QueryRequest<'_>) -> Result<BackendResponse, BackendError> {
        let body = Self::request_body(request);
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(300).collect();
            return Err(BackendError::Status { status, body: snippet });
        }
        let candidates = parse_completion(&text)?;
        Ok(BackendResponse { candidates, raw: text })
    }
}
