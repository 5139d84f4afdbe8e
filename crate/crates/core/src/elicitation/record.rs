use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dimension, ItemRef};

use super::ElicitError;

/// Cache identity of one query. Every field takes part in equality, so a
/// change to any of them (including the rendered prompt) is a new key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub model_name: String,
    pub session_id: String,
    pub study_id: String,
    pub item_id: String,
    pub dimension: Dimension,
    pub prompt_hash: String,
}

impl RecordKey {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef::new(&self.study_id, &self.item_id)
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.model_name, self.session_id, self.study_id, self.item_id, self.dimension
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    /// Natural-log probability.
    pub logprob: f64,
}

impl Candidate {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }

    /// Convenience for tests and fixtures quoting linear probabilities.
    pub fn from_probability(token: impl Into<String>, p: f64) -> Self {
        Self::new(token, p.ln())
    }
}

/// Sampling settings that were sent with the request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub top_logprob_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    pub key: RecordKey,
    pub top_candidates: Vec<Candidate>,
    pub params: RequestParams,
    /// Unix seconds; 0 for the deterministic mock.
    pub timestamp: u64,
    pub raw_response: String,
}

/// Descending logprob, ties by token so the order is total.
pub(crate) fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| {
        b.logprob
            .partial_cmp(&a.logprob)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.token.cmp(&b.token))
    });
}

impl ElicitationRecord {
    pub fn validate(&self) -> Result<(), ElicitError> {
        if self.top_candidates.is_empty() {
            return Err(ElicitError::Protocol(format!("{}: no candidates", self.key)));
        }
        if self.top_candidates.len() > self.params.top_logprob_count as usize {
            return Err(ElicitError::Protocol(format!(
                "{}: {} candidates exceed top_logprob_count {}",
                self.key,
                self.top_candidates.len(),
                self.params.top_logprob_count
            )));
        }
        for c in &self.top_candidates {
            if !c.logprob.is_finite() || c.logprob > 0.0 {
                return Err(ElicitError::Protocol(format!(
                    "{}: logprob {} for token {:?} is not finite and ≤ 0",
                    self.key, c.logprob, c.token
                )));
            }
        }
        if self.top_candidates.windows(2).any(|w| w[0].logprob < w[1].logprob) {
            return Err(ElicitError::Protocol(format!("{}: candidates not sorted", self.key)));
        }
        Ok(())
    }

    /// One JSONL line (without the trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
