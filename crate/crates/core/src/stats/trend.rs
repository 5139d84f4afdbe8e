//! Per-group slopes of a focal numeric predictor and their pairwise
//! contrasts, built as linear combinations of fitted coefficients.
//!
//! For every combination of moderator levels the slope is the focal
//! coefficient plus the matching focal × moderator interaction
//! coefficients (zero at reference levels). Interactions with factors that
//! are not moderators are averaged with equal weight over their levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::design::{ColumnKind, DesignColumn};
use super::ols::OlsFit;
use super::special::student_t_two_sided;
use super::StatsError;

/// Any fit exposing named coefficients, their covariance and the degrees
/// of freedom used for t-based inference.
pub trait LinearFit {
    fn columns(&self) -> &[DesignColumn];
    fn coefficients(&self) -> &[f64];
    fn covariance(&self) -> &[Vec<f64>];
    fn inference_df(&self) -> f64;
    fn factor_levels(&self) -> &BTreeMap<String, Vec<String>>;
}

impl LinearFit for OlsFit {
    fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }
    fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
    fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }
    fn inference_df(&self) -> f64 {
        self.residual_df
    }
    fn factor_levels(&self) -> &BTreeMap<String, Vec<String>> {
        &self.factor_levels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSlope {
    pub group: String,
    pub levels: BTreeMap<String, String>,
    pub slope: f64,
    pub se: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeContrast {
    pub first: String,
    pub second: String,
    /// first − second
    pub estimate: f64,
    pub se: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTable {
    pub focal: String,
    pub moderators: Vec<String>,
    pub df: f64,
    pub slopes: Vec<GroupSlope>,
    pub contrasts: Vec<SlopeContrast>,
}

fn quad_form(c: &[f64], cov: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (i, ci) in c.iter().enumerate() {
        if *ci == 0.0 {
            continue;
        }
        for (j, cj) in c.iter().enumerate() {
            acc += ci * cov[i][j] * cj;
        }
    }
    acc.max(0.0)
}

fn two_sided(estimate: f64, se: f64, df: f64) -> (f64, f64) {
    if se == 0.0 {
        // an exactly zero contrast carries no evidence against zero
        return if estimate == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(estimate), 0.0) };
    }
    let t = estimate / se;
    (t, student_t_two_sided(t, df))
}

pub fn trend_slopes<F: LinearFit + ?Sized>(fit: &F, focal: &str, moderators: &[&str]) -> Result<TrendTable, StatsError> {
    let columns = fit.columns();
    let focal_idx = columns
        .iter()
        .position(|c| matches!(&c.kind, ColumnKind::Numeric { variable } if variable == focal))
        .ok_or_else(|| StatsError::UnknownVariable(focal.to_string()))?;

    // focal × factor interaction columns, by factor then level
    let mut interactions: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (idx, c) in columns.iter().enumerate() {
        if let ColumnKind::Interaction { numeric, factor, level } = &c.kind {
            if numeric == focal {
                interactions.entry(factor).or_default().insert(level, idx);
            }
        }
    }
    let levels_of = |factor: &str| -> Result<Vec<String>, StatsError> {
        fit.factor_levels()
            .get(factor)
            .cloned()
            .ok_or_else(|| StatsError::UnknownVariable(factor.to_string()))
    };
    for m in moderators {
        if !fit.factor_levels().contains_key(*m) {
            return Err(StatsError::UnknownVariable((*m).to_string()));
        }
    }

    // cartesian product of moderator levels, in coding order
    let mut combos: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    let mut ordered: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for m in moderators {
        let levels = levels_of(m)?;
        let mut next = Vec::new();
        let mut next_ordered = Vec::new();
        for (combo, ord) in combos.iter().zip(&ordered) {
            for l in &levels {
                let mut c = combo.clone();
                c.insert((*m).to_string(), l.clone());
                next.push(c);
                let mut o = ord.clone();
                o.push(((*m).to_string(), l.clone()));
                next_ordered.push(o);
            }
        }
        combos = next;
        ordered = next_ordered;
    }

    let p = columns.len();
    let cov = fit.covariance();
    let beta = fit.coefficients();
    let df = fit.inference_df();
    let mut vectors = Vec::new();
    for combo in &combos {
        let mut c = vec![0.0; p];
        c[focal_idx] = 1.0;
        for (factor, cols) in &interactions {
            match combo.get(*factor) {
                Some(level) => {
                    if let Some(&idx) = cols.get(level.as_str()) {
                        c[idx] = 1.0;
                    }
                }
                None => {
                    let n_levels = levels_of(factor)?.len() as f64;
                    for &idx in cols.values() {
                        c[idx] += 1.0 / n_levels;
                    }
                }
            }
        }
        vectors.push(c);
    }

    let label = |ord: &Vec<(String, String)>| -> String {
        if ord.is_empty() {
            "(all)".to_string()
        } else {
            ord.iter().map(|(f, l)| format!("{f}={l}")).collect::<Vec<_>>().join(",")
        }
    };

    let slopes: Vec<GroupSlope> = vectors
        .iter()
        .zip(combos.iter().zip(&ordered))
        .map(|(c, (combo, ord))| {
            let est: f64 = c.iter().zip(beta).map(|(a, b)| a * b).sum();
            let se = quad_form(c, cov).sqrt();
            let (t, pv) = two_sided(est, se, df);
            GroupSlope {
                group: label(ord),
                levels: combo.clone(),
                slope: est,
                se,
                t_value: t,
                p_value: pv,
            }
        })
        .collect();

    let mut contrasts = Vec::new();
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let diff: Vec<f64> = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a - b).collect();
            let est: f64 = diff.iter().zip(beta).map(|(a, b)| a * b).sum();
            let se = quad_form(&diff, cov).sqrt();
            let (t, pv) = two_sided(est, se, df);
            contrasts.push(SlopeContrast {
                first: slopes[i].group.clone(),
                second: slopes[j].group.clone(),
                estimate: est,
                se,
                t_value: t,
                p_value: pv,
            });
        }
    }

    Ok(TrendTable {
        focal: focal.to_string(),
        moderators: moderators.iter().map(|m| m.to_string()).collect(),
        df,
        slopes,
        contrasts,
    })
}
