//! Run configuration, read from a single TOML document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use normforge::corpus::{Dimension, InstructionSet, LikertScale, PartitionKey};
use normforge::elicitation::{
    ElicitationParams, InstructionRole, PromptTemplate, RetryPolicy, DEFAULT_LINT_PATTERNS, DEFAULT_MOCK_SOFTNESS,
    DEFAULT_RATING_CONSTRAINT,
};
use normforge::lmm::{LmmSpec, MeasureKind, Objective, RandomFactor, Transform};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

/// Instruction texts, either inline or in a separate TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InstructionSource {
    File(PathBuf),
    Inline(InstructionSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Chat-completions URL; required for `live`, ignored by `mock`.
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retry_base")]
    pub retry_base_ms: u64,
    #[serde(default = "default_retry_cap")]
    pub retry_cap_ms: u64,
    #[serde(default = "default_softness")]
    pub softness: f64,
}

fn default_timeout() -> u64 {
    60
}
fn default_retry_base() -> u64 {
    500
}
fn default_retry_cap() -> u64 {
    30_000
}
fn default_softness() -> f64 {
    DEFAULT_MOCK_SOFTNESS
}

impl BackendConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(self.retry_base_ms),
            cap: Duration::from_millis(self.retry_cap_ms),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Mock backend only: Spearman correlation the simulated rater aims for.
    pub target_rho: Option<f64>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_top_logprobs")]
    pub top_logprob_count: u32,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_max_tokens() -> u32 {
    1
}
fn default_top_logprobs() -> u32 {
    3
}
fn default_retry_limit() -> u32 {
    5
}
fn default_concurrency() -> usize {
    4
}

impl ModelConfig {
    pub fn params(&self, session_id: &str) -> ElicitationParams {
        ElicitationParams {
            model_name: self.name.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            top_logprob_count: self.top_logprob_count,
            session_id: session_id.to_string(),
            retry_limit: self.retry_limit,
            concurrency_limit: self.concurrency,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default)]
    pub role: InstructionRole,
    pub rating_constraint: Option<String>,
    pub lint_patterns: Option<Vec<String>>,
}

impl PromptConfig {
    pub fn template(&self) -> PromptTemplate {
        PromptTemplate {
            role: self.role,
            rating_constraint: self
                .rating_constraint
                .clone()
                .unwrap_or_else(|| DEFAULT_RATING_CONSTRAINT.to_string()),
        }
    }

    pub fn lint_patterns(&self) -> Vec<String> {
        match &self.lint_patterns {
            Some(p) => p.clone(),
            None => DEFAULT_LINT_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A response-time (or similar) dataset to refit with each rating source.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_measure")]
    pub measure: String,
    #[serde(default)]
    pub transform: Transform,
    /// Study whose item ids the dataset uses.
    pub study: String,
    pub dimension: Dimension,
    /// Extra covariates (columns `covariate_<name>`) entering as fixed effects.
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_random")]
    pub random: Vec<String>,
}

fn default_measure() -> String {
    "rt".into()
}
fn default_random() -> Vec<String> {
    vec!["subject".into(), "item".into()]
}

impl ResponseConfig {
    pub fn measure_kind(&self) -> Result<MeasureKind> {
        self.measure
            .parse()
            .map_err(|e| PipelineError::config("config", format!("response {}: {e}", self.name)))
    }

    pub fn spec(&self) -> Result<LmmSpec> {
        let random = self
            .random
            .iter()
            .map(|r| r.parse::<RandomFactor>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::config("config", format!("response {}: {e}", self.name)))?;
        let spec = LmmSpec {
            fixed: self.fixed.clone(),
            intercept: true,
            random_intercepts: random,
            objective: self.objective,
        };
        spec.validate()
            .map_err(|e| PipelineError::config("config", format!("response {}: {e}", self.name)))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_partitions")]
    pub partitions: Vec<String>,
    /// Dimensions to elicit and analyse; all corpus dimensions when absent.
    pub dimensions: Option<Vec<Dimension>>,
    #[serde(default)]
    pub responses: Vec<ResponseConfig>,
}

fn default_partitions() -> Vec<String> {
    vec!["class".into(), "subset".into(), "language".into()]
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            partitions: default_partitions(),
            dimensions: None,
            responses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub corpus: PathBuf,
    pub instructions: InstructionSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Points of the common scale used when studies are pooled.
    #[serde(default = "default_target_scale")]
    pub target_scale: i64,
    #[serde(default = "default_sessions")]
    pub sessions: Vec<String>,
    pub backend: BackendConfig,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("norm-forge-out")
}
fn default_target_scale() -> i64 {
    7
}
fn default_sessions() -> Vec<String> {
    vec!["1".into(), "2".into()]
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub only: Option<String>,
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !s.starts_with('.')
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::config("config", e.to_string()))
    }

    /// Relative paths in the document are taken from `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        if let InstructionSource::File(p) = &mut self.instructions {
            fix(p);
        }
        for r in &mut self.analysis.responses {
            fix(&mut r.path);
        }
    }

    pub fn scale(&self) -> LikertScale {
        LikertScale::with_points(self.target_scale).expect("validated")
    }

    pub fn partitions(&self) -> Vec<PartitionKey> {
        self.analysis
            .partitions
            .iter()
            .map(|p| p.parse().expect("validated"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::config("config", m));
        if LikertScale::with_points(self.target_scale).is_err() {
            return bad(format!("target_scale must be 5, 6 or 7 points, got {}", self.target_scale));
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !safe_name(&m.name) {
                return bad(format!("model name {:?} must use letters, digits, '-', '_' or '.'", m.name));
            }
            if m.name == normforge::aggregation::HUMAN_SOURCE {
                return bad("\"human\" is reserved for the human norms".into());
            }
            if !names.insert(m.name.as_str()) {
                return bad(format!("model {} is listed twice", m.name));
            }
            if let Err(e) = m.params("1").validate() {
                return bad(format!("model {}: {e}", m.name));
            }
            if self.backend.kind == BackendKind::Mock {
                match m.target_rho {
                    Some(r) if r.is_finite() && (-1.0..=1.0).contains(&r) => {}
                    Some(r) => return bad(format!("model {}: target_rho {r} outside [-1, 1]", m.name)),
                    None => return bad(format!("model {}: the mock backend needs target_rho", m.name)),
                }
            }
        }
        if self.sessions.is_empty() {
            return bad("sessions is empty".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.sessions {
            if !safe_name(s) {
                return bad(format!("session id {s:?} must use letters, digits, '-', '_' or '.'"));
            }
            if !seen.insert(s) {
                return bad(format!("session {s} is listed twice"));
            }
        }
        match self.backend.kind {
            BackendKind::Live if self.backend.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) => {
                return bad("backend.endpoint is required for the live backend".into())
            }
            BackendKind::Mock if !(self.backend.softness.is_finite() && self.backend.softness > 0.0) => {
                return bad(format!("backend.softness must be > 0, got {}", self.backend.softness))
            }
            _ => {}
        }
        for p in &self.analysis.partitions {
            if p.parse::<PartitionKey>().is_err() {
                return bad(format!("unknown partition {p:?}; use class, subset, language or dimension"));
            }
        }
        if self.analysis.dimensions.as_ref().is_some_and(|d| d.is_empty()) {
            return bad("analysis.dimensions is empty".into());
        }
        let mut seen = BTreeSet::new();
        for r in &self.analysis.responses {
            if !safe_name(&r.name) {
                return bad(format!("response name {:?} must use letters, digits, '-', '_' or '.'", r.name));
            }
            if !seen.insert(&r.name) {
                return bad(format!("response {} is listed twice", r.name));
            }
            r.measure_kind()?;
            r.spec()?;
        }
        Ok(())
    }
}

/// A validated configuration together with what identifies it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub only: Option<String>,
    /// SHA-256 over the config bytes and the effective seed and filter.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| PipelineError::config("config", format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| PipelineError::config("config", format!("{} is not UTF-8", path.display())))?;
        let mut config = RunConfig::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        if let Some(only) = &overrides.only {
            if only.trim().is_empty() {
                return Err(PipelineError::config("config", "--only is empty"));
            }
        }
        let mut h = Sha256::new();
        h.update(&bytes);
        h.update(format!("\nseed={}\nonly={}\n", config.seed, overrides.only.as_deref().unwrap_or("")).as_bytes());
        Ok(Self {
            config,
            only: overrides.only.clone(),
            hash: hex::encode(h.finalize()),
        })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }
}
