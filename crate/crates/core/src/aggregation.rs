//! Turn top-k candidate tokens into continuous ratings.
//!
//! Tokens that read as an integer on the rating scale are kept; their
//! probabilities are renormalized and the rating is the expectation of the
//! kept values under those weights.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{standardize, CorpusError, Dimension, ItemRef, LikertScale, StudyCorpus};
use crate::elicitation::{Candidate, ElicitationRecord, RecordKey};

/// Source label of human norms in rating tables.
pub const HUMAN_SOURCE: &str = "human";

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("{key}: no valid rating among candidates [{}]", format_dropped(dropped))]
    Unrateable { key: String, dropped: Vec<DroppedCandidate> },
    #[error("no candidates to aggregate")]
    Empty,
    #[error("{0} is not in the corpus")]
    UnknownItem(String),
    #[error("{item} is not rated for {dimension}")]
    UnratedDimension { item: String, dimension: Dimension },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("rating table line {line}: {message}")]
    Table { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    NotAnInteger,
    OutOfRange,
    ZeroMass,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NotAnInteger => "not-an-integer",
            DropReason::OutOfRange => "out-of-range",
            DropReason::ZeroMass => "zero-mass",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub token: String,
    pub reason: DropReason,
}

pub fn format_dropped(dropped: &[DroppedCandidate]) -> String {
    dropped
        .iter()
        .map(|d| format!("{:?}:{}", d.token, d.reason))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidCandidate {
    pub value: i64,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedCandidates {
    /// One entry per distinct value, ascending.
    pub valid: Vec<ValidCandidate>,
    pub dropped: Vec<DroppedCandidate>,
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Split raw candidates into scale-valid integers and dropped tokens.
/// Tokens naming the same integer (e.g. "3" and " 3") pool their mass.
pub fn classify_candidates(candidates: &[Candidate], scale: LikertScale) -> ParsedCandidates {
    let mut merged: BTreeMap<i64, f64> = BTreeMap::new();
    let mut dropped = Vec::new();
    for c in candidates {
        let t = c.token.trim();
        let digits = t.strip_prefix('-').unwrap_or(t);
        let value = if !digits.is_empty() && digits.len() <= 18 && digits.bytes().all(|b| b.is_ascii_digit()) {
            t.parse::<i64>().ok()
        } else {
            None
        };
        let reason = match value {
            None => Some(DropReason::NotAnInteger),
            Some(v) if !scale.contains_point(v) => Some(DropReason::OutOfRange),
            Some(_) if !c.logprob.is_finite() => Some(DropReason::ZeroMass),
            Some(_) => None,
        };
        match (reason, value) {
            (None, Some(v)) => {
                let e = merged.entry(v).or_insert(f64::NEG_INFINITY);
                *e = log_add(*e, c.logprob);
            }
            (Some(reason), _) => dropped.push(DroppedCandidate {
                token: c.token.clone(),
                reason,
            }),
            (None, None) => unreachable!(),
        }
    }
    ParsedCandidates {
        valid: merged
            .into_iter()
            .map(|(value, logprob)| ValidCandidate { value, logprob })
            .collect(),
        dropped,
    }
}

pub fn parse_candidates(record: &ElicitationRecord, scale: LikertScale) -> Result<ParsedCandidates, AggregationError> {
    if record.top_candidates.is_empty() {
        return Err(AggregationError::Empty);
    }
    let parsed = classify_candidates(&record.top_candidates, scale);
    if parsed.valid.is_empty() {
        return Err(AggregationError::Unrateable {
            key: record.key.to_string(),
            dropped: parsed.dropped,
        });
    }
    Ok(parsed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: i64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRating {
    pub rating: f64,
    pub used_candidates: Vec<WeightedValue>,
}

/// Renormalize exp(logprob) over the valid candidates and take the
/// expectation. Values whose weight underflows to zero are omitted from
/// `used_candidates`.
pub fn weighted_rating(valid: &[ValidCandidate]) -> Result<WeightedRating, AggregationError> {
    if valid.is_empty() {
        return Err(AggregationError::Empty);
    }
    let max = valid.iter().map(|c| c.logprob).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AggregationError::Empty);
    }
    let raw: Vec<f64> = valid.iter().map(|c| (c.logprob - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut rating = 0.0;
    let mut used = Vec::new();
    for (c, r) in valid.iter().zip(&raw) {
        let w = r / total;
        if w > 0.0 {
            rating += c.value as f64 * w;
            used.push(WeightedValue { value: c.value, weight: w });
        }
    }
    // rounding must not push the expectation outside the convex hull
    let lo = used.iter().map(|u| u.value).min().unwrap_or(0) as f64;
    let hi = used.iter().map(|u| u.value).max().unwrap_or(0) as f64;
    Ok(WeightedRating {
        rating: rating.clamp(lo, hi),
        used_candidates: used,
    })
}

/// Parse and weight raw candidates in one step.
pub fn weighted_rating_from_candidates(candidates: &[Candidate], scale: LikertScale) -> Result<f64, AggregationError> {
    let parsed = classify_candidates(candidates, scale);
    Ok(weighted_rating(&parsed.valid)?.rating)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRating {
    pub key: RecordKey,
    pub rating: f64,
    pub used_candidates: Vec<WeightedValue>,
    pub dropped_candidates: Vec<DroppedCandidate>,
}

pub fn aggregate_record(record: &ElicitationRecord, scale: LikertScale) -> Result<AggregatedRating, AggregationError> {
    let parsed = parse_candidates(record, scale)?;
    let w = weighted_rating(&parsed.valid)?;
    Ok(AggregatedRating {
        key: record.key.clone(),
        rating: w.rating,
        used_candidates: w.used_candidates,
        dropped_candidates: parsed.dropped,
    })
}

/// One line of a rating table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub model: String,
    pub session_id: String,
    pub study_id: String,
    pub item_id: String,
    pub dimension: Dimension,
    pub rating: f64,
    pub n_valid_candidates: usize,
    /// `"token":reason` pairs separated by `;`.
    pub dropped: String,
}

impl RatingRow {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef::new(&self.study_id, &self.item_id)
    }
}

pub const RATING_COLUMNS: [&str; 8] = [
    "model",
    "session_id",
    "study_id",
    "item_id",
    "dimension",
    "rating",
    "n_valid_candidates",
    "dropped",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatingTable {
    pub rows: Vec<RatingRow>,
}

impl RatingTable {
    pub fn new(rows: Vec<RatingRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Human norm means as a table with source label [`HUMAN_SOURCE`].
    pub fn human(corpus: &StudyCorpus) -> Self {
        let mut rows = Vec::new();
        for s in corpus.stimuli() {
            for (dimension, norm) in &s.norms {
                if let Some(mean) = norm.mean {
                    rows.push(RatingRow {
                        model: HUMAN_SOURCE.into(),
                        session_id: HUMAN_SOURCE.into(),
                        study_id: s.study_id.clone(),
                        item_id: s.item_id.clone(),
                        dimension: *dimension,
                        rating: mean,
                        n_valid_candidates: 0,
                        dropped: String::new(),
                    });
                }
            }
        }
        Self { rows }
    }

    pub fn filter(&self, mut keep: impl FnMut(&RatingRow) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn extend(&mut self, other: RatingTable) {
        self.rows.extend(other.rows);
    }

    /// Distinct model labels in first-seen order.
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model) {
                out.push(r.model.clone());
            }
        }
        out
    }

    /// Distinct session ids in first-seen order.
    pub fn sessions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.session_id) {
                out.push(r.session_id.clone());
            }
        }
        out
    }

    /// Map every rating from its item's native scale onto `to`.
    pub fn standardized(&self, corpus: &StudyCorpus, to: LikertScale) -> Result<Self, AggregationError> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let item = r.item_ref();
            let s = corpus
                .get(&item)
                .ok_or_else(|| AggregationError::UnknownItem(item.to_string()))?;
            let norm = s.norms.get(&r.dimension).ok_or(AggregationError::UnratedDimension {
                item: item.to_string(),
                dimension: r.dimension,
            })?;
            let mut row = r.clone();
            row.rating = standardize(r.rating, norm.scale, to)?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), AggregationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RATING_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.model.as_str(),
                r.session_id.as_str(),
                r.study_id.as_str(),
                r.item_id.as_str(),
                r.dimension.as_str(),
                &r.rating.to_string(),
                &r.n_valid_candidates.to_string(),
                r.dropped.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, AggregationError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != RATING_COLUMNS {
            return Err(AggregationError::Table {
                line: 1,
                message: format!("expected columns {}, found {}", RATING_COLUMNS.join(","), header.join(",")),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| AggregationError::Table { line, message };
            let dimension: Dimension = rec[4].trim().parse().map_err(|_| bad(format!("unknown dimension {:?}", &rec[4])))?;
            let rating: f64 = rec[5]
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("rating {:?} is not a finite number", &rec[5])))?;
            let n_valid: usize = rec[6]
                .trim()
                .parse()
                .map_err(|_| bad(format!("n_valid_candidates {:?} is not a count", &rec[6])))?;
            rows.push(RatingRow {
                model: rec[0].to_string(),
                session_id: rec[1].to_string(),
                study_id: rec[2].to_string(),
                item_id: rec[3].to_string(),
                dimension,
                rating,
                n_valid_candidates: n_valid,
                dropped: rec[7].to_string(),
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), AggregationError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AggregationError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrateableItem {
    pub key: RecordKey,
    pub dropped: Vec<DroppedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionRatings {
    pub table: RatingTable,
    pub unrateable: Vec<UnrateableItem>,
}

/// Aggregate records in order. Unrateable records are listed separately;
/// records naming items or dimensions absent from the corpus are errors.
pub fn aggregate_session(records: &[ElicitationRecord], corpus: &StudyCorpus) -> Result<SessionRatings, AggregationError> {
    let mut out = SessionRatings::default();
    for rec in records {
        let item = rec.key.item_ref();
        let stimulus = corpus
            .get(&item)
            .ok_or_else(|| AggregationError::UnknownItem(item.to_string()))?;
        let norm = stimulus
            .norms
            .get(&rec.key.dimension)
            .ok_or(AggregationError::UnratedDimension {
                item: item.to_string(),
                dimension: rec.key.dimension,
            })?;
        match aggregate_record(rec, norm.scale) {
            Ok(a) => out.table.rows.push(RatingRow {
                model: rec.key.model_name.clone(),
                session_id: rec.key.session_id.clone(),
                study_id: rec.key.study_id.clone(),
                item_id: rec.key.item_id.clone(),
                dimension: rec.key.dimension,
                rating: a.rating,
                n_valid_candidates: a.used_candidates.len(),
                dropped: format_dropped(&a.dropped_candidates),
            }),
            Err(AggregationError::Unrateable { dropped, .. }) => out.unrateable.push(UnrateableItem {
                key: rec.key.clone(),
                dropped,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
