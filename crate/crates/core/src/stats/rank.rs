//! Tie-averaged ranks and Spearman rank correlation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided;
use super::StatsError;

/// Conventional star notation for two-sided p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignificanceBand {
    #[serde(rename = "ns")]
    NotSignificant,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "***")]
    P001,
}

impl SignificanceBand {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            SignificanceBand::P001
        } else if p < 0.01 {
            SignificanceBand::P01
        } else if p < 0.05 {
            SignificanceBand::P05
        } else {
            SignificanceBand::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignificanceBand::NotSignificant => "ns",
            SignificanceBand::P05 => "*",
            SignificanceBand::P01 => "**",
            SignificanceBand::P001 => "***",
        }
    }
}

impl fmt::Display for SignificanceBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n: usize,
    pub p_value: f64,
    pub significance_band: SignificanceBand,
}

impl CorrelationResult {
    fn new(rho: f64, n: usize, p_value: f64) -> Self {
        Self {
            rho,
            n,
            p_value,
            significance_band: SignificanceBand::from_p(p_value),
        }
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn ranks(x: &[f64]) -> Result<Vec<f64>, StatsError> {
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = r;
        }
        i = j;
    }
    Ok(out)
}

pub(crate) fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // equal spreads (always the case for tie-free ranks) divide exactly, so
    // identical or reversed rank vectors give exactly ±1
    let denom = if sxx == syy { sxx } else { sxx.sqrt() * syy.sqrt() };
    Some((sxy / denom).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { n: x.len(), min: 3 });
    }
    Ok(())
}

/// Two-sided p-value for a correlation via t = r·sqrt((n−2)/(1−r²)).
pub fn correlation_t_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    student_t_two_sided(t, df)
}

/// Spearman's ρ with a t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check_pair(x, y)?;
    let rx = ranks(x)?;
    let ry = ranks(y)?;
    let rho = pearson_raw(&rx, &ry).ok_or(StatsError::Degenerate("constant input: Spearman ρ is undefined"))?;
    Ok(CorrelationResult::new(rho, x.len(), correlation_t_p_value(rho, x.len())))
}

/// Largest n accepted by [`spearman_exact`] (10! permutations).
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

/// Spearman's ρ with an exact two-sided permutation p-value: the share of
/// all n! re-pairings whose |ρ| reaches the observed |ρ|. Ties are kept as
/// in the observed rank vectors.
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check_pair(x, y)?;
    let n = x.len();
    if n > EXACT_PERMUTATION_MAX_N {
        return Err(StatsError::TooMany {
            n,
            max: EXACT_PERMUTATION_MAX_N,
        });
    }
    let rx = ranks(x)?;
    let ry = ranks(y)?;
    let rho = pearson_raw(&rx, &ry).ok_or(StatsError::Degenerate("constant input: Spearman ρ is undefined"))?;

    // ρ is affine in Σ rx·ry_perm, so compare that sum directly.
    let mean = (n as f64 + 1.0) / 2.0;
    let cx: Vec<f64> = rx.iter().map(|r| r - mean).collect();
    let cy: Vec<f64> = ry.iter().map(|r| r - mean).collect();
    let observed: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum::<f64>().abs();
    let tol = 1e-9 * (1.0 + observed);

    let mut perm: Vec<usize> = (0..n).collect();
    let mut hits: u64 = 0;
    let mut total: u64 = 0;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |perm: &[usize]| {
        let s: f64 = cx.iter().zip(perm).map(|(a, &j)| a * cy[j]).sum();
        total += 1;
        if s.abs() >= observed - tol {
            hits += 1;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(CorrelationResult::new(rho, n, hits as f64 / total as f64))
}
