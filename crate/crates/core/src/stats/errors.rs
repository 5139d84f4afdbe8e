//! Absolute human-machine rating error and the model of how it varies with
//! the human rating, the dimension and the rating model.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};

use super::design::{ModelFrame, Term};
use super::ols::{ols_fit, OlsFit};
use super::trend::{trend_slopes, TrendTable};
use super::validity::session_means;
use super::StatsError;
use crate::aggregation::RatingTable;
use crate::corpus::{standardize, Dimension, ItemRef, LikertScale, StudyCorpus};
use crate::lmm::{fit_mixed, GroupingFactor, LmmFit, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub model: String,
    pub study_id: String,
    pub item_id: String,
    pub dimension: Dimension,
    /// Human norm on the common scale.
    pub human: f64,
    /// Session-mean machine rating on the common scale.
    pub machine: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub scale: LikertScale,
    pub rows: Vec<ErrorRow>,
    /// Machine-rated keys with no human norm to compare against.
    pub unmatched: Vec<String>,
}

pub const ERROR_COLUMNS: [&str; 7] = ["model", "study_id", "item_id", "dimension", "human", "machine", "error"];

impl ErrorTable {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(ERROR_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.study_id.clone(),
                r.item_id.clone(),
                r.dimension.to_string(),
                r.human.to_string(),
                r.machine.to_string(),
                r.error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.model).collect();
        set.into_iter().cloned().collect()
    }
}

/// |human − machine| per (model, item, dimension) after mapping both onto
/// `to_scale`. Machine sessions are averaged first.
pub fn absolute_error(
    human: &RatingTable,
    machine: &RatingTable,
    to_scale: LikertScale,
    corpus: &StudyCorpus,
) -> Result<ErrorTable, StatsError> {
    let to_common = |item: &ItemRef, dim: Dimension, v: f64| -> Result<f64, StatsError> {
        let stim = corpus
            .get(item)
            .ok_or_else(|| StatsError::KeyMismatch(format!("item {item} is not in the corpus")))?;
        let norm = stim
            .norms
            .get(&dim)
            .ok_or_else(|| StatsError::KeyMismatch(format!("item {item} has no {dim} scale")))?;
        standardize(v, norm.scale, to_scale).map_err(|e| StatsError::KeyMismatch(format!("item {item}: {e}")))
    };
    let human: BTreeMap<(ItemRef, Dimension), f64> = session_means(human)
        .into_iter()
        .map(|((_, item, d), v)| ((item, d), v))
        .collect();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    let mut failures = Vec::new();
    for ((model, item, dim), m) in session_means(machine) {
        let Some(h) = human.get(&(item.clone(), dim)) else {
            unmatched.push(format!("{model}/{item}/{dim}"));
            continue;
        };
        match (to_common(&item, dim, *h), to_common(&item, dim, m)) {
            (Ok(h), Ok(m)) => rows.push(ErrorRow {
                model,
                study_id: item.study_id,
                item_id: item.item_id,
                dimension: dim,
                human: h,
                machine: m,
                error: (h - m).abs(),
            }),
            (Err(e), _) | (_, Err(e)) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(StatsError::KeyMismatch(failures.join("; ")));
    }
    Ok(ErrorTable {
        scale: to_scale,
        rows,
        unmatched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanError {
    pub dimension: Dimension,
    pub model: String,
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Model terms in R-like notation, for the report.
    pub formula: String,
    pub ols: OlsFit,
    /// Slope of error on the human rating per model.
    pub by_model: TrendTable,
    pub by_dimension: TrendTable,
    /// Same fixed effects with a random intercept per study; present only
    /// when the table spans at least two studies.
    pub study_intercept: Option<LmmFit>,
    pub study_intercept_by_model: Option<TrendTable>,
    /// Why the study-intercept variant is missing, if it is.
    pub study_intercept_note: Option<String>,
    pub mean_errors: Vec<MeanError>,
}

pub const HUMAN_PREDICTOR: &str = "human";

/// error ~ human + dimension + model + human:dimension + human:model, with
/// factor terms dropped when they have a single level. Fit by OLS and, when
/// several studies are present, again with a random intercept per study.
pub fn error_model(table: &ErrorTable) -> Result<ErrorAnalysis, StatsError> {
    if table.rows.is_empty() {
        return Err(StatsError::Empty);
    }
    let y: Vec<f64> = table.rows.iter().map(|r| r.error).collect();
    let dims: Vec<String> = table.rows.iter().map(|r| r.dimension.to_string()).collect();
    let models: Vec<String> = table.rows.iter().map(|r| r.model.clone()).collect();
    let n_levels = |v: &[String]| v.iter().collect::<BTreeSet<_>>().len();
    let frame = ModelFrame::new()
        .numeric(HUMAN_PREDICTOR, table.rows.iter().map(|r| r.human).collect())?
        .factor("dimension", dims.clone())?
        .factor("model", models.clone())?;
    let mut terms = vec![Term::Intercept, Term::Numeric(HUMAN_PREDICTOR.into())];
    let mut formula = vec![HUMAN_PREDICTOR.to_string()];
    let mut moderators = Vec::new();
    for (name, values) in [("dimension", &dims), ("model", &models)] {
        if n_levels(values) > 1 {
            terms.push(Term::Factor(name.into()));
            formula.push(name.into());
            moderators.push(name);
        }
    }
    for m in &moderators {
        terms.push(Term::NumericByFactor(HUMAN_PREDICTOR.into(), (*m).into()));
        formula.push(format!("{HUMAN_PREDICTOR}:{m}"));
    }
    let design = frame.design(&terms)?;
    let ols = ols_fit(&y, &design)?;
    let slopes = |fit: &dyn super::trend::LinearFit, m: &str| {
        let mods: Vec<&str> = if moderators.contains(&m) { vec![m] } else { Vec::new() };
        trend_slopes(fit, HUMAN_PREDICTOR, &mods)
    };
    let by_model = slopes(&ols, "model")?;
    let by_dimension = slopes(&ols, "dimension")?;

    let studies: Vec<String> = table.rows.iter().map(|r| r.study_id.clone()).collect();
    let (study_intercept, study_intercept_by_model, study_intercept_note) = if n_levels(&studies) < 2 {
        (None, None, Some("single study; no study-level random intercept".to_string()))
    } else {
        match fit_mixed(&y, &design, vec![GroupingFactor::from_labels("study", &studies)], Objective::Reml) {
            Ok(fit) => {
                let t = slopes(&fit, "model")?;
                (Some(fit), Some(t), None)
            }
            Err(e) => (None, None, Some(format!("study-intercept fit failed: {e}"))),
        }
    };

    let mut acc: BTreeMap<(Dimension, String), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = acc.entry((r.dimension, r.model.clone())).or_insert((0.0, 0));
        e.0 += r.error;
        e.1 += 1;
    }
    let mean_errors = acc
        .into_iter()
        .map(|((dimension, model), (s, n))| MeanError {
            dimension,
            model,
            n,
            mean: s / n as f64,
        })
        .collect();

    Ok(ErrorAnalysis {
        formula: format!("error ~ {}", formula.join(" + ")),
        ols,
        by_model,
        by_dimension,
        study_intercept,
        study_intercept_by_model,
        study_intercept_note,
        mean_errors,
    })
}
