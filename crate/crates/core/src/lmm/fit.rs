//! Profiled-deviance fitting of random-intercept models.
//!
//! With relative standard deviations `s_f = σ_f / σ` collected in the
//! diagonal Λ, the penalized system
//!
//! ```text
//! [ ΛZ'ZΛ + I   ΛZ'X ] [u]   [ΛZ'y]
//! [ X'ZΛ        X'X  ] [β] = [X'y ]
//! ```
//!
//! is solved by block Cholesky (`L` for the random block, `R_X` for the
//! Schur complement). With `r² = ‖y − Xβ − ZΛu‖² + ‖u‖²` the deviances are
//!
//! ```text
//! ML:   log|L|² + n (1 + log(2π r² / n))
//! REML: log|L|² + log|R_X|² + (n − p)(1 + log(2π r² / (n − p)))
//! ```

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stats::ols::cov_rows;
use crate::stats::special::student_t_two_sided;
use crate::stats::Design;

use super::{Convergence, LmmError, LmmFit, Objective, TrajectoryPoint};

/// One random-intercept grouping: a level index per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingFactor {
    pub name: String,
    pub levels: Vec<String>,
    pub index: Vec<usize>,
}

impl GroupingFactor {
    /// Levels sorted; `labels` gives each observation's level.
    pub fn from_labels(name: &str, labels: &[String]) -> Self {
        let mut levels: Vec<String> = labels.to_vec();
        levels.sort();
        levels.dedup();
        let pos: BTreeMap<&String, usize> = levels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let index = labels.iter().map(|l| pos[l]).collect();
        Self {
            name: name.to_string(),
            levels,
            index,
        }
    }
}

pub(crate) struct Problem {
    n: usize,
    p: usize,
    q: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
    factors: Vec<GroupingFactor>,
    offsets: Vec<usize>,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

pub(crate) struct Evaluation {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub b: DVector<f64>,
    pub r2: f64,
    pub rss: f64,
    pub schur: Cholesky<f64, Dyn>,
}

impl Problem {
    pub(crate) fn new(y: &[f64], design: &Design, factors: Vec<GroupingFactor>) -> Result<Self, LmmError> {
        let n = y.len();
        let p = design.ncols();
        if design.nrows() != n {
            return Err(LmmError::Data(format!("{} responses for {} design rows", n, design.nrows())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LmmError::Data("response contains non-finite values".into()));
        }
        if factors.is_empty() {
            return Err(LmmError::Spec("at least one random intercept is required".into()));
        }
        for f in &factors {
            if f.index.len() != n {
                return Err(LmmError::Data(format!("factor {} has {} labels for {n} rows", f.name, f.index.len())));
            }
            if f.levels.len() < 2 {
                return Err(LmmError::TooFewLevels {
                    factor: f.name.clone(),
                    levels: f.levels.len(),
                });
            }
        }
        let min = p + factors.len() + 2;
        if n < min {
            return Err(LmmError::TooFew { n, min });
        }
        let collinear = design.collinear_columns();
        if !collinear.is_empty() {
            return Err(LmmError::RankDeficient(collinear));
        }
        let mut offsets = Vec::with_capacity(factors.len());
        let mut q = 0;
        for f in &factors {
            offsets.push(q);
            q += f.levels.len();
        }
        let x = design.matrix.clone();
        let yv = DVector::from_column_slice(y);
        let mut ztz = DMatrix::zeros(q, q);
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = DVector::zeros(q);
        for i in 0..n {
            let cols: Vec<usize> = factors.iter().zip(&offsets).map(|(f, o)| o + f.index[i]).collect();
            for &a in &cols {
                zty[a] += y[i];
                for j in 0..p {
                    ztx[(a, j)] += x[(i, j)];
                }
                for &b in &cols {
                    ztz[(a, b)] += 1.0;
                }
            }
        }
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &yv;
        Ok(Self {
            n,
            p,
            q,
            x,
            y: yv,
            factors,
            offsets,
            ztz,
            ztx,
            zty,
            xtx,
            xty,
        })
    }

    pub(crate) fn n_factors(&self) -> usize {
        self.factors.len()
    }

    fn lambda(&self, s: &[f64]) -> DVector<f64> {
        let mut lam = DVector::zeros(self.q);
        for (k, f) in self.factors.iter().enumerate() {
            for j in 0..f.levels.len() {
                lam[self.offsets[k] + j] = s[k];
            }
        }
        lam
    }

    pub(crate) fn evaluate(&self, s: &[f64], objective: Objective) -> Result<Evaluation, LmmError> {
        let lam = self.lambda(s);
        let q = self.q;
        let a = DMatrix::from_fn(q, q, |i, j| lam[i] * self.ztz[(i, j)] * lam[j] + if i == j { 1.0 } else { 0.0 });
        let chol = Cholesky::new(a).ok_or_else(|| LmmError::Singular("random-effects block".into()))?;
        let l = chol.l();
        let lzy = self.zty.component_mul(&lam);
        let cu = l
            .solve_lower_triangular(&lzy)
            .ok_or_else(|| LmmError::Singular("random-effects block".into()))?;
        let lzx = DMatrix::from_fn(q, self.p, |i, j| lam[i] * self.ztx[(i, j)]);
        let rzx = l
            .solve_lower_triangular(&lzx)
            .ok_or_else(|| LmmError::Singular("random-effects block".into()))?;
        let m = &self.xtx - rzx.transpose() * &rzx;
        let schur = Cholesky::new(m).ok_or_else(|| LmmError::Singular("fixed-effects block".into()))?;
        let beta = schur.solve(&(&self.xty - rzx.transpose() * &cu));
        let u = l
            .transpose()
            .solve_upper_triangular(&(&cu - &rzx * &beta))
            .ok_or_else(|| LmmError::Singular("random-effects block".into()))?;
        let b = u.component_mul(&lam);

        let mut resid = &self.y - &self.x * &beta;
        for i in 0..self.n {
            for (k, f) in self.factors.iter().enumerate() {
                resid[i] -= b[self.offsets[k] + f.index[i]];
            }
        }
        let rss = resid.norm_squared();
        let r2 = rss + u.norm_squared();
        let logdet_l: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let two_pi = 2.0 * std::f64::consts::PI;
        let nf = self.n as f64;
        let deviance = match objective {
            Objective::Ml => logdet_l + nf * (1.0 + (two_pi * r2 / nf).ln()),
            Objective::Reml => {
                let logdet_rx: f64 = 2.0 * schur.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let dfr = (self.n - self.p) as f64;
                logdet_l + logdet_rx + dfr * (1.0 + (two_pi * r2 / dfr).ln())
            }
        };
        if !deviance.is_finite() {
            return Err(LmmError::Singular("deviance is not finite".into()));
        }
        Ok(Evaluation {
            deviance,
            beta,
            b,
            r2,
            rss,
            schur,
        })
    }

    pub(crate) fn deviance(&self, s: &[f64], objective: Objective) -> f64 {
        self.evaluate(s, objective).map_or(f64::INFINITY, |e| e.deviance)
    }
}

const MAX_ITER: usize = 200;
const IMPROVEMENT_TOL: f64 = 1e-8;
const GRADIENT_TOL: f64 = 1e-6;

fn fd_step(s: f64) -> f64 {
    1e-4 * s.max(1.0)
}

/// Central differences, second-order one-sided next to the zero bound.
pub(crate) fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, s: &[f64], f0: f64) -> Vec<f64> {
    let mut g = vec![0.0; s.len()];
    let mut t = s.to_vec();
    for i in 0..s.len() {
        let h = fd_step(s[i]);
        if s[i] >= h {
            t[i] = s[i] + h;
            let fp = f(&t);
            t[i] = s[i] - h;
            let fm = f(&t);
            g[i] = (fp - fm) / (2.0 * h);
        } else {
            t[i] = s[i] + h;
            let f1 = f(&t);
            t[i] = s[i] + 2.0 * h;
            let f2 = f(&t);
            g[i] = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
        }
        t[i] = s[i];
    }
    g
}

/// Gradient-norm tolerance: 1e-6, raised to the finite-difference noise
/// floor (deviance rounding ~1e-12 relative over a 1e-4 step) when the
/// deviance is large.
fn gradient_tol(f0: f64) -> f64 {
    GRADIENT_TOL.max(1e-8 * (1.0 + f0.abs()))
}

fn projected_norm(s: &[f64], g: &[f64]) -> (f64, Vec<bool>) {
    let free: Vec<bool> = s.iter().zip(g).map(|(si, gi)| !(*si <= 0.0 && *gi >= 0.0)).collect();
    let n = g
        .iter()
        .zip(&free)
        .filter(|(_, f)| **f)
        .map(|(gi, _)| gi * gi)
        .sum::<f64>()
        .sqrt();
    (n, free)
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
fn golden(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the bound itself may beat the interior
    if f(0.0) <= f(mid) && lo <= tol {
        0.0
    } else {
        mid
    }
}

pub(crate) fn optimize(
    f: &dyn Fn(&[f64]) -> f64,
    k: usize,
) -> Result<(Vec<f64>, Convergence), LmmError> {
    let grid = [0.0, 0.05, 0.2, 0.5, 1.0, 2.0, 5.0];
    let mut best = (vec![1.0; k], f64::INFINITY);
    let mut idx = vec![0usize; k];
    let mut evaluations = 0usize;
    loop {
        let s: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let v = f(&s);
        evaluations += 1;
        if v < best.1 {
            best = (s, v);
        }
        let mut carry = 0;
        while carry < k {
            idx[carry] += 1;
            if idx[carry] < grid.len() {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
        if carry == k {
            break;
        }
    }
    let (mut s, mut fs) = best;
    if !fs.is_finite() {
        return Err(LmmError::Singular("deviance undefined on the whole start grid".into()));
    }

    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        theta: s.clone(),
        deviance: fs,
    }];
    let mut last_improvement = f64::INFINITY;
    let mut method = "projected-newton".to_string();
    let mut fallback_used = false;
    let mut stalled = false;
    let mut iteration = 0;
    loop {
        let g = fd_gradient(f, &s, fs);
        evaluations += 2 * k;
        let (pg, free) = projected_norm(&s, &g);
        // A failed Newton step followed by a line-search sweep that cannot
        // lower the deviance along any coordinate is a coordinate-wise
        // minimum; the remaining gradient is rounding noise.
        let converged = pg < gradient_tol(fs) && (last_improvement < IMPROVEMENT_TOL || iteration == 0 || fallback_used);
        if converged || stalled {
            let boundary = s.iter().map(|v| *v <= 0.0).collect();
            return Ok((
                s,
                Convergence {
                    iterations: iteration,
                    gradient_norm: pg,
                    evaluations,
                    method,
                    at_boundary: boundary,
                    trajectory,
                },
            ));
        }
        if iteration >= MAX_ITER {
            return Err(LmmError::NonConvergence {
                iterations: iteration,
                gradient_norm: pg,
                trajectory,
            });
        }
        iteration += 1;

        // Newton step on the free coordinates, Hessian from gradient differences
        let fi: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        let m = fi.len();
        let mut h = DMatrix::zeros(m, m);
        for (cj, &j) in fi.iter().enumerate() {
            let step = 10.0 * fd_step(s[j]);
            let mut t = s.clone();
            t[j] += step;
            let ft = f(&t);
            let gt = fd_gradient(f, &t, ft);
            evaluations += 1 + 2 * k;
            for (ci, &i) in fi.iter().enumerate() {
                h[(ci, cj)] = (gt[i] - g[i]) / step;
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let gfree = DVector::from_iterator(m, fi.iter().map(|&i| g[i]));
        let dir_free = match Cholesky::new(h) {
            Some(c) => -c.solve(&gfree),
            None => -gfree.clone(),
        };
        let mut dir = vec![0.0; k];
        for (c, &i) in fi.iter().enumerate() {
            dir[i] = dir_free[c];
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..50 {
            let trial: Vec<f64> = s.iter().zip(&dir).map(|(a, d)| (a + alpha * d).max(0.0)).collect();
            let ft = f(&trial);
            evaluations += 1;
            let slope: f64 = g.iter().zip(trial.iter().zip(&s)).map(|(gi, (t, a))| gi * (t - a)).sum();
            if ft.is_finite() && ft <= fs + 1e-4 * slope.min(0.0) && ft <= fs {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((trial, ft)) if fs - ft > 0.0 => {
                last_improvement = fs - ft;
                s = trial;
                fs = ft;
                fallback_used = false;
            }
            _ => {
                // flat or awkward curvature: cyclic golden-section refinement
                method = "projected-newton+golden-section".to_string();
                let before = fs;
                for _ in 0..20 {
                    let cycle_start = fs;
                    for i in 0..k {
                        let mut hi = (4.0 * s[i]).max(10.0);
                        let line = |v: f64| {
                            let mut t = s.clone();
                            t[i] = v;
                            f(&t)
                        };
                        let mut v = golden(&line, 0.0, hi, 1e-10);
                        while v > 0.95 * hi {
                            hi *= 4.0;
                            v = golden(&line, 0.0, hi, 1e-10);
                        }
                        evaluations += 120;
                        let fv = line(v);
                        if fv <= fs {
                            s[i] = v;
                            fs = fv;
                        }
                    }
                    if cycle_start - fs < 1e-12 {
                        break;
                    }
                }
                last_improvement = before - fs;
                stalled = last_improvement <= 0.0;
                fallback_used = true;
            }
        }
        trajectory.push(TrajectoryPoint {
            iteration,
            theta: s.clone(),
            deviance: fs,
        });
    }
}

pub(crate) fn design_hash(design: &Design) -> String {
    let mut h = Sha256::new();
    for c in &design.columns {
        h.update(c.name.as_bytes());
        h.update([0u8]);
    }
    for v in design.matrix.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Fit a random-intercept model to `y` with fixed design `design`.
pub fn fit_mixed(
    y: &[f64],
    design: &Design,
    factors: Vec<GroupingFactor>,
    objective: Objective,
) -> Result<LmmFit, LmmError> {
    let problem = Problem::new(y, design, factors)?;
    let k = problem.n_factors();
    let f = |s: &[f64]| problem.deviance(s, objective);
    let (theta, convergence) = optimize(&f, k)?;
    let ev = problem.evaluate(&theta, objective)?;

    let n = problem.n;
    let p = problem.p;
    let sigma2 = match objective {
        Objective::Ml => ev.r2 / n as f64,
        Objective::Reml => ev.r2 / (n - p) as f64,
    };
    let m_inv = ev.schur.inverse();
    let cov = m_inv * sigma2;
    let df = (n - p - (k + 1)) as f64;
    let beta: Vec<f64> = ev.beta.iter().copied().collect();
    let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pv: Vec<f64> = t.iter().map(|t| student_t_two_sided(*t, df)).collect();

    let mut variance_components = BTreeMap::new();
    let mut relative_sd = BTreeMap::new();
    let mut conditional_modes = BTreeMap::new();
    for (idx, fac) in problem.factors.iter().enumerate() {
        variance_components.insert(fac.name.clone(), theta[idx] * theta[idx] * sigma2);
        relative_sd.insert(fac.name.clone(), theta[idx]);
        let modes: Vec<(String, f64)> = fac
            .levels
            .iter()
            .enumerate()
            .map(|(j, l)| (l.clone(), ev.b[problem.offsets[idx] + j]))
            .collect();
        conditional_modes.insert(fac.name.clone(), modes);
    }
    let fixed: Vec<f64> = (&problem.x * &ev.beta).iter().copied().collect();
    let var_fixed = population_variance(&fixed);
    let var_random: f64 = variance_components.values().sum();
    let total = var_fixed + var_random + sigma2;
    let (r2_marginal, r2_conditional) = if total > 0.0 {
        (var_fixed / total, (var_fixed + var_random) / total)
    } else {
        (0.0, 0.0)
    };
    let log_likelihood = -0.5 * ev.deviance;
    let n_params = p + k + 1;
    Ok(LmmFit {
        objective,
        columns: design.columns.clone(),
        factor_levels: design.factor_levels.clone(),
        beta,
        se,
        t_values: t,
        p_values: pv,
        df,
        covariance: cov_rows(&cov),
        variance_components,
        relative_sd,
        residual_variance: sigma2,
        log_likelihood,
        aic: -2.0 * log_likelihood + 2.0 * n_params as f64,
        deviance: ev.deviance,
        r2_marginal,
        r2_conditional,
        n_obs: n,
        n_params,
        residual_ss: ev.rss,
        convergence,
        conditional_modes,
        design_hash: design_hash(design),
    })
}

/// Profiled deviance at relative standard deviations `theta`; exposed for
/// gradient and oracle checks.
pub fn profiled_deviance(
    y: &[f64],
    design: &Design,
    factors: Vec<GroupingFactor>,
    objective: Objective,
    theta: &[f64],
) -> Result<f64, LmmError> {
    let problem = Problem::new(y, design, factors)?;
    if theta.len() != problem.n_factors() || theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(LmmError::Spec(format!("theta must hold {} values ≥ 0", problem.n_factors())));
    }
    Ok(problem.evaluate(theta, objective)?.deviance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub log_likelihood: f64,
    pub objective: Objective,
    pub n_params: usize,
}
