//! Rank correlation, least squares, trend contrasts and the validation
//! tables built on them.

pub mod design;
pub mod errors;
pub mod ols;
pub mod rank;
pub mod special;
pub mod trend;
pub mod validity;

use thiserror::Error;

pub use design::{ColumnKind, Design, DesignColumn, ModelFrame, Term};
pub use ols::{ols_fit, OlsFit};
pub use rank::{ranks, spearman, spearman_exact, CorrelationResult, SignificanceBand};
pub use errors::{absolute_error, error_model, ErrorAnalysis, ErrorRow, ErrorTable, MeanError};
pub use trend::{trend_slopes, LinearFit, TrendTable};
pub use validity::{test_retest, validity_table, ReliabilityCell, ReliabilityTable, ValidityCell, ValidityTable, OVERALL_GROUP};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} observations, got {n}")]
    TooFew { n: usize, min: usize },
    #[error("exact computation supports at most {max} observations, got {n}")]
    TooMany { n: usize, max: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("factor `{factor}` has no level `{level}`")]
    UnknownLevel { factor: String, level: String },
    #[error("rating tables do not match: {0}")]
    KeyMismatch(String),
}
