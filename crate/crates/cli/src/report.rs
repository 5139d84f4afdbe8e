//! The validation report, its plots and the provenance manifest. Everything
//! here is rebuilt from files already in the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use normforge::aggregation::RatingTable;
use normforge::corpus::{Dimension, ItemRef};
use normforge::elicitation::ElicitationRecord;
use normforge::stats::{CorrelationResult, ValidityTable, OVERALL_GROUP};
use sha2::{Digest, Sha256};

use crate::artifacts::*;
use crate::error::{PipelineError, Result};
use crate::plots;
use crate::stages::{clear_dir, io_err, read_json, write_bytes, write_json, Context};

const STAGE: &str = "report";

fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| io_err(STAGE, path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn optional<T: serde::de::DeserializeOwned>(ctx: &Context, rel: &str) -> Result<Option<T>> {
    let p = ctx.path(rel);
    if p.is_file() {
        read_json(STAGE, &p).map(Some)
    } else {
        Ok(None)
    }
}

pub fn provenance(ctx: &Context) -> Result<Provenance> {
    let cache = ctx.path(CACHE);
    let (cache_digest, record_timestamps) = if cache.is_file() {
        let text = fs::read_to_string(&cache).map_err(|e| io_err(STAGE, &cache, e))?;
        let mut range = TimestampRange {
            records: 0,
            first: None,
            last: None,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: ElicitationRecord = serde_json::from_str(line).map_err(|e| io_err(STAGE, &cache, e))?;
            range.records += 1;
            range.first = Some(range.first.map_or(rec.timestamp, |t| t.min(rec.timestamp)));
            range.last = Some(range.last.map_or(rec.timestamp, |t| t.max(rec.timestamp)));
        }
        (Some(hex::encode(Sha256::digest(text.as_bytes()))), range)
    } else {
        (
            None,
            TimestampRange {
                records: 0,
                first: None,
                last: None,
            },
        )
    };
    Ok(Provenance {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: ctx.loaded.hash.clone(),
        seed: ctx.loaded.config.seed,
        cache_digest,
        record_timestamps,
    })
}

fn fmt_r(r: &Option<CorrelationResult>, note: &Option<String>) -> String {
    match r {
        Some(r) => format!("{:.3} (p = {:.3e}, {})", r.rho, r.p_value, r.significance_band.as_str()),
        None => note.clone().unwrap_or_else(|| "unavailable".into()),
    }
}

fn validity_markdown(out: &mut String, t: &ValidityTable) {
    let _ = writeln!(out, "\n### {}\n", t.partition);
    let _ = writeln!(out, "| group | dimension | model | n | rho |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for c in &t.cells {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            c.group,
            c.dimension,
            c.model,
            c.n,
            fmt_r(&c.result, &c.note)
        );
    }
}

pub fn markdown(report: &ValidationReport) -> String {
    let mut s = String::new();
    let p = &report.provenance;
    let _ = writeln!(s, "# Norm validation report\n");
    let _ = writeln!(s, "- software: {} {}", p.software, p.version);
    let _ = writeln!(s, "- config hash: `{}`", p.config_hash);
    let _ = writeln!(s, "- seed: {}", p.seed);
    let _ = writeln!(
        s,
        "- cache digest: `{}` ({} records)",
        p.cache_digest.as_deref().unwrap_or("none"),
        p.record_timestamps.records
    );
    let _ = writeln!(s, "- items: {} in {} studies", report.corpus.items, report.corpus.studies.len());

    let _ = writeln!(s, "\n## Validity (Spearman, ratings on the {} scale)", report.validity.scale);
    for t in &report.validity.tables {
        validity_markdown(&mut s, t);
    }

    let _ = writeln!(s, "\n## Test-retest reliability\n");
    match &report.reliability {
        Some(ReliabilityDoc { table: Some(t), .. }) => {
            let _ = writeln!(s, "Sessions {} and {}.\n", t.session_a, t.session_b);
            let _ = writeln!(s, "| dimension | language | model | n | rho |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            for c in &t.cells {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    c.dimension,
                    c.language,
                    c.model,
                    c.n,
                    fmt_r(&c.result, &c.note)
                );
            }
        }
        Some(ReliabilityDoc { skipped: Some(w), .. }) => {
            let _ = writeln!(s, "Skipped: {w}.");
        }
        _ => {
            let _ = writeln!(s, "Not run.");
        }
    }

    let _ = writeln!(s, "\n## Substitution\n");
    match &report.substitution {
        Some(doc) if !doc.analyses.is_empty() => {
            for a in &doc.analyses {
                let _ = writeln!(
                    s,
                    "### {} ({} {}, {}, {} fit)\n",
                    a.name, a.study, a.dimension, a.measure, a.table.objective
                );
                let _ = writeln!(s, "| source | beta | t | p | AIC (ML) | rank | R2m | R2c |");
                let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
                for r in &a.table.rows {
                    let _ = writeln!(
                        s,
                        "| {} | {:.4} | {:.2} | {:.3e} | {:.1} | {} | {:.3} | {:.3} |",
                        r.source, r.beta, r.t_value, r.p_value, r.aic_ml, r.aic_rank, r.r2_marginal, r.r2_conditional
                    );
                }
                let _ = writeln!(s);
            }
        }
        Some(SubstitutionDoc { skipped: Some(w), .. }) => {
            let _ = writeln!(s, "Skipped: {w}.");
        }
        _ => {
            let _ = writeln!(s, "Not run.");
        }
    }

    let _ = writeln!(s, "\n## Rating error\n");
    match &report.errors {
        Some(e) => {
            let _ = writeln!(s, "`{}` over {} rows.\n", e.analysis.formula, e.n_rows);
            let _ = writeln!(s, "| model | slope | se | p |");
            let _ = writeln!(s, "|---|---|---|---|");
            for g in &e.analysis.by_model.slopes {
                let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:.3e} |", g.group, g.slope, g.se, g.p_value);
            }
            if !e.analysis.by_model.contrasts.is_empty() {
                let _ = writeln!(s, "\n| contrast | estimate | se | p |");
                let _ = writeln!(s, "|---|---|---|---|");
                for c in &e.analysis.by_model.contrasts {
                    let _ = writeln!(
                        s,
                        "| {} - {} | {:.4} | {:.4} | {:.3e} |",
                        c.first, c.second, c.estimate, c.se, c.p_value
                    );
                }
            }
            let _ = writeln!(s, "\n| dimension | model | n | mean error |");
            let _ = writeln!(s, "|---|---|---|---|");
            for m in &e.analysis.mean_errors {
                let _ = writeln!(s, "| {} | {} | {} | {:.3} |", m.dimension, m.model, m.n, m.mean);
            }
        }
        None => {
            let _ = writeln!(s, "Not run.");
        }
    }

    if !report.plots.is_empty() {
        let _ = writeln!(s, "\n## Plots\n");
        for p in &report.plots {
            let _ = writeln!(s, "- [{p}](../{p})");
        }
    }
    if !report.notices.is_empty() {
        let _ = writeln!(s, "\n## Notices\n");
        for n in &report.notices {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn count_rows(path: &Path) -> Result<usize> {
    if !path.is_file() {
        return Ok(0);
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(STAGE, path, e))?;
    Ok(r.records().count())
}

/// Per-item means over sessions, keyed by (source, item, dimension).
fn item_means(t: &RatingTable) -> BTreeMap<(String, ItemRef, Dimension), f64> {
    let mut acc: BTreeMap<(String, ItemRef, Dimension), (f64, usize)> = BTreeMap::new();
    for r in &t.rows {
        let e = acc.entry((r.model.clone(), r.item_ref(), r.dimension)).or_insert((0.0, 0));
        e.0 += r.rating;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn load_ratings(ctx: &Context, rel: &str) -> Result<RatingTable> {
    let p = ctx.path(rel);
    if !p.is_file() {
        return Err(PipelineError::missing(
            STAGE,
            format!("{} not found; run `aggregate` first", p.display()),
        ));
    }
    RatingTable::load(&p).map_err(|e| io_err(STAGE, &p, e))
}

fn emit_plots(ctx: &Context, report: &mut ValidationReport) -> Result<()> {
    clear_dir(STAGE, &ctx.path(PLOTS_DIR))?;
    let corpus = ctx.corpus(STAGE)?;
    let scale = report.validity.scale;
    let human = load_ratings(ctx, HUMAN_RATINGS)?
        .standardized(&corpus, scale)
        .map_err(|e| PipelineError::other(STAGE, e.to_string()))?;
    let machine = load_ratings(ctx, RATINGS)?
        .standardized(&corpus, scale)
        .map_err(|e| PipelineError::other(STAGE, e.to_string()))?;
    let human: BTreeMap<(ItemRef, Dimension), f64> =
        item_means(&human).into_iter().map(|((_, i, d), v)| ((i, d), v)).collect();
    let machine = item_means(&machine);
    let plot_err = |name: &str, e: Box<dyn std::error::Error>| PipelineError::other(STAGE, format!("{name}: {e}"));
    let save = |name: String, svg: String, report: &mut ValidationReport| -> Result<()> {
        let rel = format!("{PLOTS_DIR}/{name}");
        write_bytes(STAGE, &ctx.path(&rel), svg.as_bytes())?;
        report.plots.push(rel);
        Ok(())
    };

    let wanted = ctx
        .loaded
        .config
        .analysis
        .dimensions
        .clone()
        .unwrap_or_else(|| Dimension::ALL.to_vec());
    let overall = report.validity.tables[0].clone();
    for dim in Dimension::ALL.into_iter().filter(|d| wanted.contains(d)) {
        let cells: Vec<_> = overall.cells.iter().filter(|c| c.dimension == dim).collect();
        if cells.is_empty() {
            report
                .notices
                .push(format!("plots: no {dim} ratings in the {OVERALL_GROUP} group; scatter skipped"));
            continue;
        }
        for c in cells {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for ((model, item, d), m) in &machine {
                if *d == dim && *model == c.model {
                    if let Some(h) = human.get(&(item.clone(), dim)) {
                        x.push(*h);
                        y.push(*m);
                    }
                }
            }
            let svg = plots::scatter(&x, &y, dim, &c.model, scale, c.result.map(|r| r.rho))
                .map_err(|e| plot_err("scatter", e))?;
            save(format!("scatter_{dim}_{}.svg", c.model), svg, report)?;
        }
    }

    match report.validity.tables.iter().find(|t| t.partition == "subset") {
        Some(t) if !t.cells.is_empty() => {
            let svg = plots::subset_bars(&t.cells).map_err(|e| plot_err("subsets", e))?;
            save("validity_by_subset.svg".into(), svg, report)?;
        }
        Some(_) => report
            .notices
            .push("plots: no subset group has ratings; subset chart skipped".into()),
        None => {}
    }

    if let Some(e) = report.errors.clone() {
        let models: Vec<String> = e.analysis.by_model.slopes.iter().map(|s| s.group.clone()).collect();
        let models = if e.analysis.ols.factor_levels.contains_key("model") {
            e.analysis.ols.factor_levels["model"].clone()
        } else {
            models
        };
        let svg = plots::error_trends(&e.analysis, e.scale, &models).map_err(|e| plot_err("error trends", e))?;
        save("error_by_human_rating.svg".into(), svg, report)?;
    }
    Ok(())
}

/// Assemble and write the report, its plots and the manifest.
pub fn report(ctx: &mut Context) -> Result<()> {
    let validity_path = ctx.path(VALIDITY);
    if !validity_path.is_file() {
        return Err(PipelineError::missing(
            STAGE,
            format!("{} not found; run `validate` first", validity_path.display()),
        ));
    }
    let corpus: CorpusSummary = read_json(STAGE, &ctx.path(CORPUS_SUMMARY))?;
    let validity: ValidityDoc = read_json(STAGE, &validity_path)?;
    let reliability: Option<ReliabilityDoc> = optional(ctx, RELIABILITY)?;
    let substitution: Option<SubstitutionDoc> = optional(ctx, SUBSTITUTION)?;
    let errors: Option<ErrorDoc> = optional(ctx, ERROR_MODEL)?;

    let mut notices = Vec::new();
    for w in &corpus.lint_warnings {
        notices.push(format!(
            "ingest: {} {} instructions mention {:?}: {}",
            w.study, w.dimension, w.pattern, w.sentence
        ));
    }
    let unrateable = count_rows(&ctx.path(UNRATEABLE))?;
    if unrateable > 0 {
        notices.push(format!("aggregate: {unrateable} record(s) had no valid rating; see {UNRATEABLE}"));
    }
    for t in &validity.tables {
        for n in &t.notices {
            notices.push(format!("validate: {}: {n}", t.partition));
        }
        for c in t.cells.iter().filter(|c| c.result.is_none()) {
            notices.push(format!(
                "validate: {} {} {} {}: {}",
                t.partition,
                c.group,
                c.dimension,
                c.model,
                c.note.as_deref().unwrap_or("unavailable")
            ));
        }
    }
    match &reliability {
        None => notices.push("reliability: not run".into()),
        Some(ReliabilityDoc { skipped: Some(w), .. }) => notices.push(format!("reliability: skipped: {w}")),
        Some(ReliabilityDoc { table: Some(t), .. }) => {
            for c in t.cells.iter().filter(|c| c.result.is_none()) {
                notices.push(format!(
                    "reliability: {} {} {}: {}",
                    c.dimension,
                    c.language,
                    c.model,
                    c.note.as_deref().unwrap_or("unavailable")
                ));
            }
        }
        _ => {}
    }
    match &substitution {
        None => notices.push("substitute: not run".into()),
        Some(doc) => {
            if let Some(w) = &doc.skipped {
                notices.push(format!("substitute: skipped: {w}"));
            }
            for a in &doc.analyses {
                for n in &a.notices {
                    notices.push(format!("substitute: {}: {n}", a.name));
                }
            }
        }
    }
    match &errors {
        None => notices.push("error-analysis: not run".into()),
        Some(e) => {
            if !e.unmatched.is_empty() {
                notices.push(format!(
                    "error-analysis: {} machine rating(s) have no human norm and are left out",
                    e.unmatched.len()
                ));
            }
            if let Some(n) = &e.analysis.study_intercept_note {
                notices.push(format!("error-analysis: {n}"));
            }
        }
    }

    let mut report = ValidationReport {
        provenance: provenance(ctx)?,
        corpus,
        validity,
        reliability,
        substitution,
        errors,
        plots: Vec::new(),
        notices,
    };
    emit_plots(ctx, &mut report)?;
    clear_dir(STAGE, &ctx.path(REPORT_DIR))?;
    write_json(STAGE, &ctx.path(REPORT_JSON), &report)?;
    write_bytes(STAGE, &ctx.path(REPORT_MD), markdown(&report).as_bytes())?;
    write_manifest(ctx, &report.provenance)?;
    eprintln!("report: {} plots, {} notices", report.plots.len(), report.notices.len());
    Ok(())
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(STAGE, dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(STAGE, dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("under base");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(rel.join("/"));
        }
    }
    Ok(())
}

/// Digest of every file in the output directory except the manifest itself.
pub fn write_manifest(ctx: &Context, provenance: &Provenance) -> Result<()> {
    let base = ctx.loaded.out().to_path_buf();
    let mut files = Vec::new();
    walk(&base, &base, &mut files)?;
    files.retain(|f| f != MANIFEST);
    files.sort();
    let mut entries = Vec::new();
    for f in files {
        let (bytes, sha256) = sha256_file(&base.join(&f))?;
        entries.push(ManifestEntry {
            path: f,
            bytes,
            sha256,
        });
    }
    write_json(
        STAGE,
        &ctx.path(MANIFEST),
        &Manifest {
            provenance: provenance.clone(),
            files: entries,
        },
    )
}
