//! Prompt construction, endpoint queries, the response cache and the
//! offline mock rater.

mod backend;
mod cache;
mod mock;
mod prompt;
mod record;
mod session;

pub use backend::{
    parse_completion, Backend, BackendError, BackendResponse, ErrorClass, LiveBackend, QueryRequest, RetryPolicy,
    API_KEY_ENV,
};
pub use cache::RecordCache;
pub use mock::{
    mock_rate, render_completion, MockBackend, MockModel, MockRater, MockRaterConfig, ScriptedBackend,
    DEFAULT_MOCK_SOFTNESS,
};
pub use prompt::{
    build_prompt, lint_instructions, ChatMessage, InstructionRole, LintWarning, PromptSpec, PromptTemplate,
    DEFAULT_LINT_PATTERNS, DEFAULT_RATING_CONSTRAINT,
};
pub use record::{Candidate, ElicitationRecord, RecordKey, RequestParams};
pub use session::{elicit, run_session, ItemFailure, SessionError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("invalid elicitation parameters: {0}")]
    InvalidParams(String),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("transport failed after {attempts} attempts: {last}")]
    Retryable { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("credential error: {0}")]
    Credential(String),
    #[error("cache integrity: {0}")]
    Integrity(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("mock rater: {0}")]
    Mock(String),
}

impl ElicitError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ElicitError::Retryable { .. } => ErrorClass::Retryable,
            ElicitError::Credential(_) => ErrorClass::Credential,
            _ => ErrorClass::Protocol,
        }
    }
}

/// Per-model, per-session query settings. Defaults give deterministic,
/// single-token answers with the three most likely tokens returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElicitationParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub top_logprob_count: u32,
    pub session_id: String,
    pub retry_limit: u32,
    pub concurrency_limit: usize,
}

impl Default for ElicitationParams {
    fn default() -> Self {
        Self {
            model_name: String::new(),
            temperature: 0.0,
            max_output_tokens: 1,
            top_logprob_count: 3,
            session_id: "1".into(),
            retry_limit: 5,
            concurrency_limit: 4,
        }
    }
}

impl ElicitationParams {
    pub fn new(model_name: impl Into<String>, session_id: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            session_id: session_id.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ElicitError> {
        let bad = |m: String| Err(ElicitError::InvalidParams(m));
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty".into());
        }
        if self.session_id.trim().is_empty() {
            return bad("session_id is empty".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be ≥ 0, got {}", self.temperature));
        }
        if self.max_output_tokens < 1 {
            return bad("max_output_tokens must be ≥ 1".into());
        }
        if !(1..=20).contains(&self.top_logprob_count) {
            return bad(format!("top_logprob_count must be in 1..=20, got {}", self.top_logprob_count));
        }
        if self.concurrency_limit < 1 {
            return bad("concurrency_limit must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn request_params(&self) -> RequestParams {
        RequestParams {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            top_logprob_count: self.top_logprob_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_deterministic_single_token_top3() {
        let p = ElicitationParams::new("gpt-4o", "1");
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.max_output_tokens, 1);
        assert_eq!(p.top_logprob_count, 3);
        p.validate().unwrap();
    }

    #[test]
    fn invalid_params_rejected() {
        let base = ElicitationParams::new("m", "1");
        for p in [
            ElicitationParams { temperature: -0.1, ..base.clone() },
            ElicitationParams { max_output_tokens: 0, ..base.clone() },
            ElicitationParams { top_logprob_count: 0, ..base.clone() },
            ElicitationParams { top_logprob_count: 21, ..base.clone() },
            ElicitationParams { model_name: " ".into(), ..base.clone() },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
