//! Linear mixed-effects models with random intercepts, fitted by profiled
//! ML or REML, and the rating-substitution analysis built on them.

mod data;
mod fit;
mod substitution;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{DesignColumn, LinearFit, ModelFrame, StatsError, Term};

pub use data::{MeasureKind, ResponseDataset, ResponseObservation, Transform, COVARIATE_PREFIX};
pub use fit::{fit_mixed, profiled_deviance, GroupingFactor, InformationCriteria};
pub use substitution::{substitution_compare, SubstitutionRow, SubstitutionTable, RATING_PREDICTOR};

#[derive(Debug, Error)]
pub enum LmmError {
    #[error("model spec: {0}")]
    Spec(String),
    #[error("response data: {0}")]
    Data(String),
    #[error("item coverage: {0}")]
    Coverage(String),
    #[error("fixed design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("random factor {factor} has {levels} level(s); at least 2 are needed")]
    TooFewLevels { factor: String, levels: usize },
    #[error("need at least {min} observations, got {n}")]
    TooFew { n: usize, min: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        trajectory: Vec<TrajectoryPoint>,
    },
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ml,
    #[default]
    Reml,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ml => "ML",
            Objective::Reml => "REML",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomFactor {
    Subject,
    Item,
}

impl RandomFactor {
    pub fn as_str(self) -> &'static str {
        match self {
            RandomFactor::Subject => "subject",
            RandomFactor::Item => "item",
        }
    }
}

impl FromStr for RandomFactor {
    type Err = LmmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "subject" | "subject_id" => Ok(RandomFactor::Subject),
            "item" | "item_id" => Ok(RandomFactor::Item),
            other => Err(LmmError::Spec(format!("unknown random factor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmmSpec {
    /// Covariate names entering as numeric fixed effects.
    pub fixed: Vec<String>,
    pub intercept: bool,
    pub random_intercepts: Vec<RandomFactor>,
    pub objective: Objective,
}

impl Default for LmmSpec {
    fn default() -> Self {
        Self {
            fixed: Vec::new(),
            intercept: true,
            random_intercepts: vec![RandomFactor::Subject, RandomFactor::Item],
            objective: Objective::Reml,
        }
    }
}

impl LmmSpec {
    pub fn validate(&self) -> Result<(), LmmError> {
        if self.fixed.is_empty() && !self.intercept {
            return Err(LmmError::Spec("no fixed effects and no intercept".into()));
        }
        if self.random_intercepts.is_empty() {
            return Err(LmmError::Spec("random_intercepts is empty".into()));
        }
        let mut r = self.random_intercepts.clone();
        r.sort();
        r.dedup();
        if r.len() != self.random_intercepts.len() {
            return Err(LmmError::Spec("random_intercepts lists a factor twice".into()));
        }
        Ok(())
    }

    pub fn with_objective(&self, objective: Objective) -> Self {
        Self {
            objective,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Projected finite-difference gradient norm at the solution.
    pub gradient_norm: f64,
    pub evaluations: usize,
    pub method: String,
    /// Per random factor: variance pinned at zero.
    pub at_boundary: Vec<bool>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub objective: Objective,
    pub columns: Vec<DesignColumn>,
    #[serde(skip)]
    pub factor_levels: BTreeMap<String, Vec<String>>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// n − rank(X) − number of variance parameters.
    pub df: f64,
    pub covariance: Vec<Vec<f64>>,
    pub variance_components: BTreeMap<String, f64>,
    /// σ_f / σ_e per grouping factor.
    pub relative_sd: BTreeMap<String, f64>,
    pub residual_variance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub deviance: f64,
    pub r2_marginal: f64,
    pub r2_conditional: f64,
    pub n_obs: usize,
    pub n_params: usize,
    #[serde(skip)]
    pub residual_ss: f64,
    pub convergence: Convergence,
    #[serde(skip)]
    pub conditional_modes: BTreeMap<String, Vec<(String, f64)>>,
    pub design_hash: String,
}

impl LmmFit {
    pub fn coefficient_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_index(name).map(|i| self.beta[i])
    }
}

impl LinearFit for LmmFit {
    fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }
    fn coefficients(&self) -> &[f64] {
        &self.beta
    }
    fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }
    fn inference_df(&self) -> f64 {
        self.df
    }
    fn factor_levels(&self) -> &BTreeMap<String, Vec<String>> {
        &self.factor_levels
    }
}

/// Build the fixed design for `spec` over `data`.
pub fn fixed_design(data: &ResponseDataset, spec: &LmmSpec) -> Result<crate::stats::Design, LmmError> {
    if spec.fixed.is_empty() {
        return Ok(crate::stats::Design::from_columns(&["(Intercept)"], &[vec![1.0; data.len()]])?);
    }
    let names = data.covariate_names();
    let mut frame = ModelFrame::new();
    let mut terms = Vec::new();
    if spec.intercept {
        terms.push(Term::Intercept);
    }
    for name in &spec.fixed {
        if !names.contains(name) {
            return Err(LmmError::Spec(format!("fixed predictor {name:?} is not a covariate of the data")));
        }
        let col: Vec<f64> = data.observations.iter().map(|o| o.covariates[name]).collect();
        frame = frame.numeric(name, col)?;
        terms.push(Term::Numeric(name.clone()));
    }
    Ok(frame.design(&terms)?)
}

pub fn lmm_fit(data: &ResponseDataset, spec: &LmmSpec) -> Result<LmmFit, LmmError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(LmmError::Data("no observations".into()));
    }
    let design = fixed_design(data, spec)?;
    let factors = spec
        .random_intercepts
        .iter()
        .map(|f| {
            let labels: Vec<String> = data
                .observations
                .iter()
                .map(|o| match f {
                    RandomFactor::Subject => o.subject_id.clone(),
                    RandomFactor::Item => o.item_id.clone(),
                })
                .collect();
            GroupingFactor::from_labels(f.as_str(), &labels)
        })
        .collect();
    fit_mixed(&data.response(), &design, factors, spec.objective)
}

pub fn information_criteria(fit: &LmmFit) -> InformationCriteria {
    InformationCriteria {
        aic: fit.aic,
        log_likelihood: fit.log_likelihood,
        objective: fit.objective,
        n_params: fit.n_params,
    }
}

/// AIC difference `a − b`. REML likelihoods are only comparable when the
/// fixed designs are identical, so other REML comparisons are refused.
pub fn compare_aic(a: &LmmFit, b: &LmmFit) -> Result<f64, LmmError> {
    if a.objective != b.objective {
        return Err(LmmError::InvalidComparison(format!(
            "cannot compare a {} fit with a {} fit",
            a.objective, b.objective
        )));
    }
    if a.objective == Objective::Reml && a.design_hash != b.design_hash {
        return Err(LmmError::InvalidComparison(
            "REML fits with different fixed effects; refit both by ML".into(),
        ));
    }
    if a.n_obs != b.n_obs {
        return Err(LmmError::InvalidComparison(format!(
            "fits use different data ({} vs {} observations)",
            a.n_obs, b.n_obs
        )));
    }
    Ok(a.aic - b.aic)
}

/// (marginal, conditional) variance explained.
pub fn r_squared(fit: &LmmFit) -> (f64, f64) {
    (fit.r2_marginal, fit.r2_conditional)
}
