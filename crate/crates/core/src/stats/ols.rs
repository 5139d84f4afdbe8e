//! Ordinary least squares with Gaussian likelihood summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{Design, DesignColumn};
use super::special::student_t_two_sided;
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub columns: Vec<DesignColumn>,
    pub factor_levels: BTreeMap<String, Vec<String>>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residual_df: f64,
    /// Unbiased residual variance RSS / (n − p).
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub r_squared: f64,
    pub n_obs: usize,
    /// Row-major p × p covariance of the coefficients.
    pub covariance: Vec<Vec<f64>>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .map(|i| self.coefficients[i])
    }

    /// Number of estimated parameters counted by AIC (β plus σ²).
    pub fn n_params(&self) -> usize {
        self.coefficients.len() + 1
    }
}

pub(crate) fn cov_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn ols_fit(y: &[f64], design: &Design) -> Result<OlsFit, StatsError> {
    let n = y.len();
    let p = design.ncols();
    if design.nrows() != n {
        return Err(StatsError::LengthMismatch {
            left: n,
            right: design.nrows(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if n <= p {
        return Err(StatsError::TooFew { n, min: p + 1 });
    }
    let collinear = design.collinear_columns();
    if !collinear.is_empty() {
        return Err(StatsError::RankDeficient(collinear));
    }

    let x = &design.matrix;
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient(design.names()))?;
    let fitted = x * &beta;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let df = (n - p) as f64;
    let sigma2 = rss / df;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| StatsError::RankDeficient(design.names()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let cov = xtx_inv * sigma2;

    let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pv: Vec<f64> = t.iter().map(|t| student_t_two_sided(*t, df)).collect();

    let nf = n as f64;
    let log_likelihood = -0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + (rss / nf).ln() + 1.0);
    let aic = -2.0 * log_likelihood + 2.0 * (p + 1) as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    Ok(OlsFit {
        columns: design.columns.clone(),
        factor_levels: design.factor_levels.clone(),
        coefficients: beta.iter().copied().collect(),
        standard_errors: se,
        t_values: t,
        p_values: pv,
        residual_df: df,
        sigma2,
        log_likelihood,
        aic,
        r_squared,
        n_obs: n,
        covariance: cov_rows(&cov),
        residuals: resid.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_linear_fit() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let d = Design::from_columns(&["x"], &[x]).unwrap();
        let fit = ols_fit(&y, &d).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_is_the_mean() {
        let y = [2.0, 4.0, 9.0, 1.0, 5.5];
        let d = Design::from_columns(&["(Intercept)"], &[vec![1.0; 5]]).unwrap();
        let fit = ols_fit(&y, &d).unwrap();
        assert!((fit.coefficients[0] - 4.3).abs() < 1e-12);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn hand_solved_normal_equations() {
        // n = 6, y = a + b x. Normal equations solved by hand:
        // Σx = 21, Σx² = 91, Σy = 24.5, Σxy = 104.5
        // b = (6·104.5 − 21·24.5) / (6·91 − 21²) = 112.5 / 105
        // a = (24.5 − 21 b) / 6
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.5, 2.0, 4.5, 4.0, 5.5, 7.0];
        let b = 112.5 / 105.0;
        let a = (24.5 - 21.0 * b) / 6.0;
        let d = Design::from_columns(&["(Intercept)", "x"], &[vec![1.0; 6], x.to_vec()]).unwrap();
        let fit = ols_fit(&y, &d).unwrap();
        assert!((fit.coefficients[0] - a).abs() < 1e-12);
        assert!((fit.coefficients[1] - b).abs() < 1e-12);
        assert_eq!(fit.residual_df, 4.0);
        assert!((fit.aic - (-2.0 * fit.log_likelihood + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let d = Design::from_columns(&["(Intercept)", "x", "x_copy"], &[vec![1.0; 5], x.clone(), x]).unwrap();
        match ols_fit(&[1.0, 2.0, 3.0, 2.0, 1.0], &d) {
            Err(StatsError::RankDeficient(cols)) => assert_eq!(cols, vec!["x_copy"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_design(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -10.0f64..10.0), 8..40)
        ) {
            let x1: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let x2: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let n = rows.len();
            let d = Design::from_columns(&["(Intercept)", "x1", "x2"], &[vec![1.0; n], x1, x2]).unwrap();
            let Ok(fit) = ols_fit(&y, &d) else { return Ok(()); };
            let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for j in 0..d.ncols() {
                let col = d.matrix.column(j);
                let dot: f64 = col.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
                let cn = col.norm();
                prop_assert!(dot.abs() <= 1e-8 * cn * scale * (n as f64).sqrt());
            }
        }

        #[test]
        fn nested_models_loglik_monotone(
            rows in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 6..40)
        ) {
            let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let n = rows.len();
            let small = Design::from_columns(&["(Intercept)"], &[vec![1.0; n]]).unwrap();
            let big = Design::from_columns(&["(Intercept)", "x"], &[vec![1.0; n], x]).unwrap();
            let (Ok(a), Ok(b)) = (ols_fit(&y, &small), ols_fit(&y, &big)) else { return Ok(()); };
            prop_assert!(b.log_likelihood >= a.log_likelihood - 1e-9);
        }
    }
}
