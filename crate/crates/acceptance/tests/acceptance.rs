//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the verdicts are printed whether or not they pass.

#[path = "../../core/tests/common/mod.rs"]
mod sim;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use normforge::aggregation::weighted_rating_from_candidates;
use normforge::corpus::{Dimension, LikertScale};
use normforge::elicitation::Candidate;
use normforge::lmm::{
    fit_mixed, profiled_deviance, substitution_compare, GroupingFactor, LmmSpec, Objective,
};
use normforge::stats::{error_model, ols_fit, ranks, spearman, spearman_exact, Design, ErrorRow, ErrorTable};
use norm_forge::{Overrides, Stage};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn worked_example() -> Outcome {
    let c = [
        Candidate::from_probability("2", 0.768),
        Candidate::from_probability("3", 0.195),
        Candidate::from_probability("1", 0.037),
    ];
    let mut worst: f64 = 0.0;
    let mut shown = 0.0;
    for scale in [LikertScale::FIVE, LikertScale::SEVEN] {
        let r = weighted_rating_from_candidates(&c, scale).map_err(|e| e.to_string())?;
        worst = worst.max((r - 2.158).abs());
        shown = r;
    }
    check(worst <= 0.001, format!("rating {shown:.6}, |Δ| = {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn rank_oracle() -> Outcome {
    let mut r = sim::rng(2);
    let mut rank_err: f64 = 0.0;
    let mut rho_err: f64 = 0.0;
    let mut undefined_mismatch = 0;
    let mut p_gaps = Vec::new();
    for _ in 0..100 {
        let n = r.random_range(3..=12usize);
        // a small value range forces ties
        let x: Vec<f64> = (0..n).map(|_| r.random_range(1..=5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(1..=5) as f64).collect();
        let (rx, ox) = (ranks(&x).unwrap(), oracle_ranks(&x));
        for (a, b) in rx.iter().zip(&ox) {
            rank_err = rank_err.max((a - b).abs());
        }
        let oy = oracle_ranks(&y);
        match (spearman(&x, &y), oracle_pearson(&ox, &oy)) {
            (Ok(s), Some(o)) => {
                rho_err = rho_err.max((s.rho - o).abs());
                if n <= 8 {
                    let exact = spearman_exact(&x, &y).unwrap();
                    p_gaps.push((n, (s.p_value - exact.p_value).abs()));
                }
            }
            (Err(_), None) => {}
            _ => undefined_mismatch += 1,
        }
    }
    let (worst_n, worst_gap) = p_gaps.iter().copied().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let over = p_gaps.iter().filter(|g| g.1 > 0.05).count();
    let detail = format!(
        "ranks |Δ| {rank_err:.1e}, rho |Δ| {rho_err:.1e}, undefined mismatches {undefined_mismatch}; \
         t-approx vs exact p over {} vectors with n <= 8: {over} exceed 0.05, worst {worst_gap:.3} at n = {worst_n}",
        p_gaps.len()
    );
    check(rank_err <= 1e-12 && rho_err <= 1e-12 && undefined_mismatch == 0 && over == 0, detail)
}

// ---------------------------------------------------------------- 3

fn intercept(n: usize) -> Design {
    Design::from_columns(&["(Intercept)"], &[vec![1.0; n]]).unwrap()
}

fn anova(y: &[f64], labels: &[String], m: usize) -> (f64, f64) {
    let mut groups: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
    for (v, l) in y.iter().zip(labels) {
        groups.entry(l).or_default().push(*v);
    }
    let g = groups.len() as f64;
    let n = y.len() as f64;
    let grand = y.iter().sum::<f64>() / n;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for vals in groups.values() {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        ssb += vals.len() as f64 * (mean - grand).powi(2);
        ssw += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let msw = ssw / (n - g);
    (msw, (ssb / (g - 1.0) - msw) / m as f64)
}

/// Group-centred noise: the between-group variance estimate is zero.
fn centred_groups(seed: u64) -> (Design, Vec<f64>, Vec<String>) {
    let mut r = sim::rng(seed);
    let (mut x, mut y, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..10 {
        let noise: Vec<f64> = (0..8).map(|_| sim::normal(&mut r, 1.0)).collect();
        let mean = noise.iter().sum::<f64>() / 8.0;
        for (k, e) in noise.iter().enumerate() {
            let xi = k as f64 - 3.5;
            x.push(xi);
            y.push(2.0 + 0.5 * xi + e - mean);
            labels.push(format!("g{j}"));
        }
    }
    let d = Design::from_columns(&["(Intercept)", "x"], &[vec![1.0; y.len()], x]).unwrap();
    (d, y, labels)
}

fn crossed(seed: u64) -> (Design, Vec<f64>, Vec<String>, Vec<String>) {
    let mut r = sim::rng(seed);
    let su: Vec<f64> = (0..20).map(|_| sim::normal(&mut r, 0.6)).collect();
    let it: Vec<f64> = (0..25).map(|_| sim::normal(&mut r, 0.4)).collect();
    let cov: Vec<f64> = (0..25).map(|_| sim::normal(&mut r, 1.0)).collect();
    let (mut x, mut y, mut s_lab, mut i_lab) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (s, us) in su.iter().enumerate() {
        for (i, ui) in it.iter().enumerate() {
            if (s * 7 + i * 3) % 11 == 0 {
                continue;
            }
            x.push(cov[i]);
            y.push(1.0 + 0.3 * cov[i] + us + ui + sim::normal(&mut r, 0.5));
            s_lab.push(format!("s{s}"));
            i_lab.push(format!("i{i}"));
        }
    }
    let d = Design::from_columns(&["(Intercept)", "x"], &[vec![1.0; y.len()], x]).unwrap();
    (d, y, s_lab, i_lab)
}

fn lmm_closed_forms() -> Outcome {
    let mut beta_err: f64 = 0.0;
    for seed in 0..10 {
        let (d, y, labels) = centred_groups(seed);
        let ols = ols_fit(&y, &d).map_err(|e| e.to_string())?;
        for objective in [Objective::Reml, Objective::Ml] {
            let fit = fit_mixed(&y, &d, vec![GroupingFactor::from_labels("g", &labels)], objective)
                .map_err(|e| e.to_string())?;
            for (a, b) in fit.beta.iter().zip(&ols.coefficients) {
                beta_err = beta_err.max((a - b).abs());
            }
        }
    }

    let mut anova_err: f64 = 0.0;
    let mut interior = 0;
    for seed in 0..10 {
        let (y, labels) = sim::one_way(seed, 12, 6, 1.0, 0.7);
        let (msw, sb2) = anova(&y, &labels, 6);
        if sb2 <= 0.0 {
            continue;
        }
        interior += 1;
        let fit = fit_mixed(&y, &intercept(y.len()), vec![GroupingFactor::from_labels("group", &labels)], Objective::Reml)
            .map_err(|e| e.to_string())?;
        anova_err = anova_err
            .max((fit.residual_variance - msw).abs())
            .max((fit.variance_components["group"] - sb2).abs());
    }

    let mut grad: f64 = 0.0;
    let h = 1e-5;
    for seed in 0..5 {
        let (y, labels) = sim::one_way(seed + 20, 10, 5, 0.8, 1.0);
        let d = intercept(y.len());
        let f = || vec![GroupingFactor::from_labels("group", &labels)];
        let (dc, yc, s_lab, i_lab) = crossed(seed);
        let fc = || {
            vec![
                GroupingFactor::from_labels("subject", &s_lab),
                GroupingFactor::from_labels("item", &i_lab),
            ]
        };
        for objective in [Objective::Reml, Objective::Ml] {
            let fit = fit_mixed(&y, &d, f(), objective).map_err(|e| e.to_string())?;
            let s = fit.relative_sd["group"];
            if s > 10.0 * h {
                let up = profiled_deviance(&y, &d, f(), objective, &[s + h]).map_err(|e| e.to_string())?;
                let down = profiled_deviance(&y, &d, f(), objective, &[s - h]).map_err(|e| e.to_string())?;
                grad = grad.max(((up - down) / (2.0 * h)).abs());
            }
            let fit = fit_mixed(&yc, &dc, fc(), objective).map_err(|e| e.to_string())?;
            let theta = [fit.relative_sd["subject"], fit.relative_sd["item"]];
            for k in 0..2 {
                if theta[k] <= 10.0 * h {
                    continue;
                }
                let mut up = theta;
                let mut down = theta;
                up[k] += h;
                down[k] -= h;
                let dev = |t: &[f64]| profiled_deviance(&yc, &dc, fc(), objective, t).map_err(|e| e.to_string());
                grad = grad.max(((dev(&up)? - dev(&down)?) / (2.0 * h)).abs());
            }
        }
    }
    check(
        beta_err <= 1e-6 && anova_err <= 1e-4 && grad < 1e-4 && interior >= 5,
        format!(
            "zero-variance β vs OLS {beta_err:.1e}; REML vs ANOVA {anova_err:.1e} over {interior} fits; \
             max |FD gradient| {grad:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 4, 6, 8

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/fixtures/mock/config.toml")
}

fn pipeline(stage: Stage, out: &Path) -> Result<(), String> {
    let overrides = Overrides {
        out: Some(out.to_path_buf()),
        ..Overrides::default()
    };
    norm_forge::run(&fixture_config(), &overrides, stage)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(d: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, base, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn full_run(out: &Path) -> Result<serde_json::Value, String> {
    pipeline(Stage::All, out)?;
    let text = std::fs::read_to_string(out.join("report/report.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn validity_recovery() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = full_run(dir.path())?;
    let cells = report["validity"]["tables"][0]["cells"].as_array().cloned().unwrap_or_default();
    let cell = cells
        .iter()
        .find(|c| c["group"] == "overall" && c["dimension"] == "familiarity" && c["model"] == "mock-strong")
        .ok_or("no overall familiarity cell for mock-strong")?;
    let rho = cell["result"]["rho"].as_f64().ok_or("cell has no rho")?;
    let n = cell["n"].as_u64().unwrap_or(0);
    check(n == 300 && (rho - 0.65).abs() <= 0.05, format!("rho {rho:.4} over n = {n} (target 0.65)"))
}

fn reliability_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = full_run(dir.path())?;
    let cells = report["reliability"]["table"]["cells"].as_array().cloned().unwrap_or_default();
    let mut keys = std::collections::BTreeSet::new();
    let mut lowest = f64::INFINITY;
    for c in &cells {
        lowest = lowest.min(c["result"]["rho"].as_f64().unwrap_or(f64::NEG_INFINITY));
        keys.insert((c["dimension"].to_string(), c["language"].to_string()));
    }
    // it: three dimensions; en: familiarity and comprehensibility
    check(
        keys.len() == 5 && cells.len() == 10 && lowest >= 0.999,
        format!("{} cells over {} (dimension, language) pairs, lowest rho {lowest:.6}", cells.len(), keys.len()),
    )
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    full_run(a.path())?;
    full_run(b.path())?;
    let first = snapshot(a.path());
    let same_runs = first == snapshot(b.path());
    for f in ["report/report.json", "report/report.md", "manifest.json"] {
        std::fs::remove_file(a.path().join(f)).map_err(|e| e.to_string())?;
    }
    std::fs::remove_dir_all(a.path().join("plots")).map_err(|e| e.to_string())?;
    pipeline(Stage::Report, a.path())?;
    let regenerated = first == snapshot(a.path());
    check(
        same_runs && regenerated,
        format!("{} files; identical runs: {same_runs}; report regenerated exactly: {regenerated}", first.len()),
    )
}

// ---------------------------------------------------------------- 5

fn substitution_pattern() -> Outcome {
    let (mut human_sig, mut machine_sign, mut noise_ns, mut aic_best) = (0, 0, 0, 0);
    let seeds = 100;
    for seed in 0..seeds {
        let human = sim::item_norms(seed, 64);
        let data = sim::simulate_rt(seed, 30, &human, -0.046);
        let sets = BTreeMap::from([
            ("human".to_string(), human.clone()),
            ("machine".to_string(), sim::machine_ratings(seed, &human, 0.65)),
            ("noise".to_string(), sim::noise_ratings(seed, &human)),
        ]);
        let t = substitution_compare(&data, &sets, &LmmSpec::default(), "human").map_err(|e| e.to_string())?;
        let row = |s: &str| t.row(s).unwrap();
        if row("human").beta < 0.0 && row("human").p_value < 0.05 {
            human_sig += 1;
        }
        if row("machine").beta < 0.0 {
            machine_sign += 1;
        }
        if row("noise").p_value >= 0.05 {
            noise_ns += 1;
        }
        if row("human").aic_rank == 1 {
            aic_best += 1;
        }
    }
    check(
        human_sig >= 95 && machine_sign >= 90 && noise_ns >= 90 && aic_best >= 90,
        format!(
            "of {seeds} seeds: human negative and p < .05 in {human_sig}, machine negative in {machine_sign}, \
             noise non-significant in {noise_ns}, human best by ML AIC in {aic_best}"
        ),
    )
}

// ---------------------------------------------------------------- 7

const TREND_TRUTH: [(&str, f64); 3] = [("model-a", 0.37), ("model-b", 0.23), ("model-c", 0.06)];

fn synthetic_errors(seed: u64, per_model: usize) -> ErrorTable {
    let mut r = sim::rng(seed);
    let mut rows = Vec::new();
    for (model, slope) in TREND_TRUTH {
        for i in 0..per_model {
            let human = 1.0 + 6.0 * (i as f64 + 0.5) / per_model as f64;
            let error = 0.4 + slope * human + 0.1 * (i % 3) as f64 + sim::normal(&mut r, 0.5);
            rows.push(ErrorRow {
                model: model.into(),
                study_id: if i % 2 == 0 { "a".into() } else { "b".into() },
                item_id: format!("i{i}"),
                dimension: Dimension::ALL[i % 3],
                human,
                machine: human + error,
                error,
            });
        }
    }
    ErrorTable {
        scale: LikertScale::SEVEN,
        rows,
        unmatched: vec![],
    }
}

fn error_trends() -> Outcome {
    let mut covered = [0usize; 3];
    let mut contrast_sig = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let a = error_model(&synthetic_errors(seed, 150)).map_err(|e| e.to_string())?;
        for (k, (name, slope)) in TREND_TRUTH.iter().enumerate() {
            let g = a
                .by_model
                .slopes
                .iter()
                .find(|g| g.levels.get("model").map(String::as_str) == Some(name))
                .ok_or_else(|| format!("no slope for {name}"))?;
            if (g.slope - slope).abs() <= 2.0 * g.se {
                covered[k] += 1;
            }
        }
        let c = a
            .by_model
            .contrasts
            .iter()
            .find(|c| {
                (c.first.contains("model-a") && c.second.contains("model-c"))
                    || (c.first.contains("model-c") && c.second.contains("model-a"))
            })
            .ok_or("no model-a vs model-c contrast")?;
        if c.p_value < 0.05 {
            contrast_sig += 1;
        }
    }
    check(
        covered.iter().all(|c| *c >= 90) && contrast_sig >= 90,
        format!(
            "of {seeds} seeds: slope within 2 SE for {covered:?} (0.37, 0.23, 0.06); \
             steepest vs flattest p < .05 in {contrast_sig}"
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 8] = [
        (1, "worked example", 1, worked_example),
        (2, "rank oracle", 10, rank_oracle),
        (3, "LMM degeneracy and closed form", 30, lmm_closed_forms),
        (4, "end-to-end validity recovery", 60, validity_recovery),
        (5, "substitution pattern", 300, substitution_pattern),
        (6, "reliability protocol", 30, reliability_protocol),
        (7, "error-trend recovery", 60, error_trends),
        (8, "determinism and provenance", 60, determinism),
    ];
    let mut failed = Vec::new();
    for (n, name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        println!(
            "criterion {n} {}: {name}: {detail} [{:.2} s of {limit} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 8 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
