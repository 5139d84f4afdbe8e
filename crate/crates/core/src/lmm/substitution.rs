//! Refit one response model per rating source and compare the fits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{lmm_fit, LmmError, LmmFit, LmmSpec, Objective, ResponseDataset};

/// Covariate name under which each source's ratings enter the model.
pub const RATING_PREDICTOR: &str = "rating";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionRow {
    pub source: String,
    pub beta: f64,
    pub se: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub df: f64,
    /// From the ML refit, comparable across sources.
    pub aic_ml: f64,
    pub log_likelihood_ml: f64,
    /// 1 = lowest ML AIC.
    pub aic_rank: usize,
    pub r2_marginal: f64,
    pub r2_conditional: f64,
    /// Same sign of the rating slope as the reference source.
    pub same_direction: bool,
    pub n_obs: usize,
    #[serde(skip)]
    pub fit: Option<LmmFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionTable {
    pub reference: String,
    pub predictor: String,
    pub objective: Objective,
    pub rows: Vec<SubstitutionRow>,
    /// Items left out because no source rated them.
    pub dropped_items: Vec<String>,
}

impl SubstitutionTable {
    pub fn row(&self, source: &str) -> Option<&SubstitutionRow> {
        self.rows.iter().find(|r| r.source == source)
    }
}

/// Fit `spec` once per rating source, with the source's per-item rating as
/// the `rating` covariate. Slopes, t and p come from fits with the spec's
/// objective; AIC and log-likelihood from ML refits so that sources can be
/// ranked. The reference source (usually the human norms) is listed first.
pub fn substitution_compare(
    data: &ResponseDataset,
    rating_sets: &BTreeMap<String, BTreeMap<String, f64>>,
    spec: &LmmSpec,
    reference: &str,
) -> Result<SubstitutionTable, LmmError> {
    spec.validate()?;
    if !rating_sets.contains_key(reference) {
        return Err(LmmError::Spec(format!("reference source {reference:?} is not among the rating sets")));
    }
    let items = data.item_ids();
    let mut gaps: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (source, ratings) in rating_sets {
        let missing: BTreeSet<String> = items.iter().filter(|i| !ratings.contains_key(*i)).cloned().collect();
        gaps.insert(source, missing);
    }
    let first_gap = gaps.values().next().cloned().unwrap_or_default();
    let shared = gaps.values().all(|g| *g == first_gap);
    if !shared {
        let listing: Vec<String> = gaps
            .iter()
            .filter(|(_, g)| !g.is_empty())
            .map(|(s, g)| format!("{s}: {}", g.iter().cloned().collect::<Vec<_>>().join(" ")))
            .collect();
        return Err(LmmError::Coverage(listing.join("; ")));
    }
    let data = if first_gap.is_empty() {
        data.clone()
    } else {
        let keep: BTreeSet<String> = items.difference(&first_gap).cloned().collect();
        data.restrict_items(&keep)
    };

    let mut spec = spec.clone();
    if !spec.fixed.iter().any(|f| f == RATING_PREDICTOR) {
        spec.fixed.push(RATING_PREDICTOR.to_string());
    }
    let mut order: Vec<&String> = vec![rating_sets.keys().find(|k| *k == reference).expect("checked")];
    order.extend(rating_sets.keys().filter(|k| *k != reference));

    let results: Vec<Result<(LmmFit, LmmFit), LmmError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = order
            .iter()
            .map(|source| {
                let data = &data;
                let spec = &spec;
                let ratings = &rating_sets[*source];
                scope.spawn(move || -> Result<(LmmFit, LmmFit), LmmError> {
                    let d = data.with_item_covariate(RATING_PREDICTOR, ratings)?;
                    let main = lmm_fit(&d, spec)?;
                    let ml = if spec.objective == Objective::Ml {
                        main.clone()
                    } else {
                        lmm_fit(&d, &spec.with_objective(Objective::Ml))?
                    };
                    Ok((main, ml))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit thread")).collect()
    });

    let mut fits = Vec::new();
    for (source, r) in order.iter().zip(results) {
        let (main, ml) = r.map_err(|e| LmmError::Spec(format!("source {source}: {e}")))?;
        fits.push(((*source).clone(), main, ml));
    }
    let idx = fits[0]
        .1
        .coefficient_index(RATING_PREDICTOR)
        .expect("rating column present");
    let reference_sign = fits[0].1.beta[idx].signum();
    let mut aics: Vec<(f64, usize)> = fits.iter().enumerate().map(|(i, f)| (f.2.aic, i)).collect();
    aics.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut rank = vec![0; fits.len()];
    for (r, (_, i)) in aics.iter().enumerate() {
        rank[*i] = r + 1;
    }
    let rows = fits
        .into_iter()
        .enumerate()
        .map(|(i, (source, main, ml))| SubstitutionRow {
            source,
            beta: main.beta[idx],
            se: main.se[idx],
            t_value: main.t_values[idx],
            p_value: main.p_values[idx],
            df: main.df,
            aic_ml: ml.aic,
            log_likelihood_ml: ml.log_likelihood,
            aic_rank: rank[i],
            r2_marginal: main.r2_marginal,
            r2_conditional: main.r2_conditional,
            same_direction: main.beta[idx].signum() == reference_sign,
            n_obs: main.n_obs,
            fit: Some(main),
        })
        .collect();
    Ok(SubstitutionTable {
        reference: reference.to_string(),
        predictor: RATING_PREDICTOR.to_string(),
        objective: spec.objective,
        rows,
        dropped_items: first_gap.into_iter().collect(),
    })
}
