//! Files written by the stages, and the documents stored in them.

use normforge::corpus::{Dimension, LikertScale};
use normforge::elicitation::ItemFailure;
use normforge::lmm::SubstitutionTable;
use normforge::stats::{ErrorAnalysis, ReliabilityTable, ValidityTable};
use serde::{Deserialize, Serialize};

pub const STIMULI: &str = "corpus/stimuli.csv";
pub const INSTRUCTIONS: &str = "corpus/instructions.json";
pub const CORPUS_SUMMARY: &str = "corpus/summary.json";
pub const CACHE: &str = "cache/elicitations.jsonl";
pub const ELICITATION_SUMMARY: &str = "elicitation/summary.json";
pub const RATINGS: &str = "ratings/ratings.csv";
pub const HUMAN_RATINGS: &str = "ratings/human.csv";
pub const UNRATEABLE: &str = "ratings/unrateable.csv";
pub const VALIDITY_DIR: &str = "validity";
pub const VALIDITY: &str = "validity/validity.json";
pub const RELIABILITY_DIR: &str = "reliability";
pub const RELIABILITY: &str = "reliability/reliability.json";
pub const RELIABILITY_CSV: &str = "reliability/test_retest.csv";
pub const ERRORS_DIR: &str = "errors";
pub const ERROR_MODEL: &str = "errors/error_model.json";
pub const SUBSTITUTION_DIR: &str = "substitution";
pub const SUBSTITUTION: &str = "substitution/substitution.json";
pub const REPORT_DIR: &str = "report";
pub const REPORT_JSON: &str = "report/report.json";
pub const REPORT_MD: &str = "report/report.md";
pub const PLOTS_DIR: &str = "plots";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintEntry {
    pub study: String,
    pub dimension: Dimension,
    pub pattern: String,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension: Dimension,
    pub scale: String,
    pub rated: usize,
    pub with_human_mean: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub id: String,
    pub items: usize,
    pub dimensions: Vec<DimensionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub items: usize,
    pub studies: Vec<StudySummary>,
    pub lint_warnings: Vec<LintEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub model: String,
    pub session: String,
    pub dimension: Dimension,
    pub records: usize,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationSummary {
    pub backend: String,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityDoc {
    pub scale: LikertScale,
    pub tables: Vec<ValidityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDoc {
    pub scale: LikertScale,
    pub table: Option<ReliabilityTable>,
    /// Why there is no table.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub scale: LikertScale,
    pub n_rows: usize,
    pub unmatched: Vec<String>,
    pub analysis: ErrorAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionEntry {
    pub name: String,
    pub study: String,
    pub dimension: Dimension,
    pub measure: String,
    pub table: SubstitutionTable,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionDoc {
    pub analyses: Vec<SubstitutionEntry>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampRange {
    pub records: usize,
    pub first: Option<u64>,
    pub last: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub software: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub cache_digest: Option<String>,
    pub record_timestamps: TimestampRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub provenance: Provenance,
    pub corpus: CorpusSummary,
    pub validity: ValidityDoc,
    pub reliability: Option<ReliabilityDoc>,
    pub substitution: Option<SubstitutionDoc>,
    pub errors: Option<ErrorDoc>,
    pub plots: Vec<String>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub files: Vec<ManifestEntry>,
}
