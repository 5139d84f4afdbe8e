//! The pipeline stages. Each reads its inputs from the output directory,
//! so any stage can be rerun on its own once its prerequisites exist.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use normforge::aggregation::{aggregate_session, format_dropped, RatingTable, HUMAN_SOURCE};
use normforge::corpus::{load_corpus, read_corpus, write_corpus, Dimension, InstructionSet, StudyCorpus};
use normforge::elicitation::{
    build_prompt, lint_instructions, run_session, Backend, ElicitError, ElicitationRecord, LiveBackend, MockBackend,
    MockModel, RecordCache, RecordKey, SessionError,
};
use normforge::lmm::{substitution_compare, ResponseDataset};
use normforge::stats::{absolute_error, error_model, test_retest, validity_table, ErrorTable};
use serde::Serialize;

use crate::artifacts::*;
use crate::config::{BackendKind, InstructionSource, LoadedConfig};
use crate::error::{FailureKind, PipelineError, Result};

/// What `--only` narrowed the run to.
#[derive(Debug, Clone, PartialEq)]
pub enum Only {
    All,
    Study(String),
    Dimension(Dimension),
    Model(String),
}

pub struct Context {
    pub loaded: LoadedConfig,
    /// Printed at the end of a run and folded into the report.
    pub notices: Vec<String>,
}

pub(crate) fn io_err(stage: &'static str, path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::other(stage, format!("{}: {e}", path.display()))
}

pub(crate) fn write_bytes(stage: &'static str, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(stage, path, e))
}

pub(crate) fn write_json<T: Serialize>(stage: &'static str, path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(stage, path, e))?;
    text.push('\n');
    write_bytes(stage, path, text.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(stage: &'static str, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(stage, path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(stage, path, e))
}

/// Render into memory first so a failed write never leaves half a table.
fn write_with<E: std::fmt::Display>(
    stage: &'static str,
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>,
) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| io_err(stage, path, e))?;
    write_bytes(stage, path, &buf)
}

pub(crate) fn clear_dir(stage: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| io_err(stage, path, e))?;
    }
    Ok(())
}

impl Context {
    pub fn new(loaded: LoadedConfig) -> Self {
        Self {
            loaded,
            notices: Vec::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.loaded.out().join(rel)
    }

    fn notice(&mut self, stage: &str, message: impl AsRef<str>) {
        self.notices.push(format!("{stage}: {}", message.as_ref()));
    }

    fn require(&self, stage: &'static str, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::missing(
                stage,
                format!("{} not found; run `{producer}` first", p.display()),
            ))
        }
    }

    /// The ingested corpus, unfiltered.
    pub fn corpus(&self, stage: &'static str) -> Result<StudyCorpus> {
        let stimuli = self.require(stage, STIMULI, "ingest")?;
        let instr_path = self.require(stage, INSTRUCTIONS, "ingest")?;
        let instructions: InstructionSet = read_json(stage, &instr_path)?;
        let f = fs::File::open(&stimuli).map_err(|e| io_err(stage, &stimuli, e))?;
        read_corpus(std::io::BufReader::new(f), &instructions)
            .map_err(|e| PipelineError::other(stage, format!("{}: {e}", stimuli.display())))
    }

    pub fn only(&self, stage: &'static str, corpus: &StudyCorpus) -> Result<Only> {
        let Some(v) = self.loaded.only.as_deref() else {
            return Ok(Only::All);
        };
        let mut hits = Vec::new();
        if let Ok(d) = v.parse::<Dimension>() {
            hits.push(Only::Dimension(d));
        }
        if self.loaded.config.models.iter().any(|m| m.name == v) {
            hits.push(Only::Model(v.to_string()));
        }
        if corpus.study(v).is_some() {
            hits.push(Only::Study(v.to_string()));
        }
        match hits.len() {
            0 => Err(PipelineError::config(
                stage,
                format!("--only {v:?} names no study, dimension or model"),
            )),
            1 => Ok(hits.remove(0)),
            _ => Err(PipelineError::config(
                stage,
                format!("--only {v:?} is ambiguous: it names more than one of study, dimension, model"),
            )),
        }
    }

    fn scoped_corpus(&self, corpus: &StudyCorpus, only: &Only) -> StudyCorpus {
        match only {
            Only::Study(s) => corpus.filter(|st| &st.study_id == s),
            _ => corpus.clone(),
        }
    }

    fn models(&self, only: &Only) -> Vec<String> {
        self.loaded
            .config
            .models
            .iter()
            .filter(|m| !matches!(only, Only::Model(x) if *x != m.name))
            .map(|m| m.name.clone())
            .collect()
    }

    fn dimensions(&self, corpus: &StudyCorpus, only: &Only) -> Vec<Dimension> {
        let present = corpus.dimensions();
        let wanted: Vec<Dimension> = match &self.loaded.config.analysis.dimensions {
            Some(d) => d.clone(),
            None => Dimension::ALL.to_vec(),
        };
        Dimension::ALL
            .into_iter()
            .filter(|d| wanted.contains(d) && present.contains(d))
            .filter(|d| !matches!(only, Only::Dimension(x) if x != d))
            .collect()
    }
}

pub fn ingest(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "ingest";
    let cfg = &ctx.loaded.config;
    let instructions = match &cfg.instructions {
        InstructionSource::Inline(s) => s.clone(),
        InstructionSource::File(p) => {
            InstructionSet::load(p).map_err(|e| PipelineError::config(STAGE, format!("instructions: {e}")))?
        }
    };
    let corpus = load_corpus(&cfg.corpus, &instructions).map_err(|e| PipelineError::config(STAGE, e.to_string()))?;
    let patterns = cfg.prompt.lint_patterns();
    let patterns: Vec<&str> = patterns.iter().map(String::as_str).collect();
    let mut lint = Vec::new();
    let mut studies = Vec::new();
    for (id, study) in corpus.studies() {
        for (dim, text) in &study.instructions {
            for w in lint_instructions(text, &patterns) {
                lint.push(LintEntry {
                    study: id.clone(),
                    dimension: *dim,
                    pattern: w.pattern,
                    sentence: w.sentence,
                });
            }
        }
        let items: Vec<_> = corpus.stimuli().iter().filter(|s| &s.study_id == id).collect();
        let dimensions = study
            .scales
            .iter()
            .map(|(d, scale)| DimensionSummary {
                dimension: *d,
                scale: scale.to_string(),
                rated: items.iter().filter(|s| s.norms.contains_key(d)).count(),
                with_human_mean: items.iter().filter(|s| s.human_mean(*d).is_some()).count(),
            })
            .collect();
        studies.push(StudySummary {
            id: id.clone(),
            items: items.len(),
            dimensions,
        });
    }
    // only the instructions of ingested studies travel with the corpus
    let mut kept = InstructionSet::default();
    for (id, study) in corpus.studies() {
        for (d, t) in &study.instructions {
            kept.insert(id, *d, t.clone());
        }
    }
    write_with(STAGE, &ctx.path(STIMULI), |buf| write_corpus(&corpus, buf))?;
    write_json(STAGE, &ctx.path(INSTRUCTIONS), &kept)?;
    for w in &lint {
        ctx.notice(
            STAGE,
            format!("{} {} instructions mention {:?}: {}", w.study, w.dimension, w.pattern, w.sentence),
        );
    }
    write_json(
        STAGE,
        &ctx.path(CORPUS_SUMMARY),
        &CorpusSummary {
            items: corpus.len(),
            studies,
            lint_warnings: lint,
        },
    )?;
    eprintln!("ingest: {} items in {} studies", corpus.len(), corpus.studies().len());
    Ok(())
}

fn elicit_error(e: ElicitError) -> PipelineError {
    let kind = match e {
        ElicitError::InvalidParams(_) | ElicitError::Prompt(_) | ElicitError::Mock(_) => FailureKind::Config,
        ElicitError::Io(_) => FailureKind::Other,
        _ => FailureKind::Elicitation,
    };
    PipelineError::new("elicit", kind, e.to_string())
}

pub fn elicit(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "elicit";
    let full = ctx.corpus(STAGE)?;
    let only = ctx.only(STAGE, &full)?;
    let corpus = ctx.scoped_corpus(&full, &only);
    let models = ctx.models(&only);
    let dims = ctx.dimensions(&corpus, &only);
    let cfg = &ctx.loaded.config;

    // The backend is built before the cache is opened: a missing credential
    // must not leave anything behind.
    let backend: Box<dyn Backend> = match cfg.backend.kind {
        BackendKind::Mock => {
            let mock_models: Vec<MockModel> = cfg
                .models
                .iter()
                .map(|m| MockModel {
                    name: m.name.clone(),
                    target_rho: m.target_rho.expect("validated"),
                })
                .collect();
            Box::new(
                MockBackend::from_corpus(&full, &mock_models, cfg.seed, cfg.scale(), cfg.backend.softness)
                    .map_err(elicit_error)?,
            )
        }
        BackendKind::Live => {
            let endpoint = cfg.backend.endpoint.clone().expect("validated");
            Box::new(
                LiveBackend::from_env(endpoint, Duration::from_secs(cfg.backend.timeout_secs))
                    .map_err(|e| PipelineError::new(STAGE, FailureKind::Elicitation, e.to_string()))?,
            )
        }
    };
    let cache_path = ctx.path(CACHE);
    let fresh_cache = !cache_path.exists();
    let cache = RecordCache::open(&cache_path).map_err(elicit_error)?;
    // a key the endpoint rejects on the first call leaves no empty cache behind
    let discard_if_unused = |cache: &RecordCache| {
        if fresh_cache && cache.is_empty() {
            let _ = fs::remove_file(&cache_path);
            if let Some(dir) = cache_path.parent() {
                let _ = fs::remove_dir(dir);
            }
        }
    };
    let before = cache.writes();
    let template = cfg.prompt.template();
    let retry = cfg.backend.retry();

    let mut sessions = Vec::new();
    let mut failed = 0usize;
    for model in cfg.models.iter().filter(|m| models.contains(&m.name)) {
        for session in &cfg.sessions {
            let params = model.params(session);
            for &dim in &dims {
                let (records, failures) =
                    match run_session(&corpus, dim, &params, &template, backend.as_ref(), &cache, retry) {
                        Ok(r) => (r.len(), Vec::new()),
                        Err(SessionError::Setup(e)) => return Err(elicit_error(e)),
                        Err(SessionError::Credential(m)) => {
                            discard_if_unused(&cache);
                            return Err(PipelineError::new(
                                STAGE,
                                FailureKind::Elicitation,
                                format!("{} session {session} {dim}: credential rejected: {m}", model.name),
                            ))
                        }
                        Err(SessionError::Incomplete { failures, completed, .. }) => (completed.len(), failures),
                    };
                failed += failures.len();
                sessions.push(SessionSummary {
                    model: model.name.clone(),
                    session: session.clone(),
                    dimension: dim,
                    records,
                    failures,
                });
            }
        }
    }
    let summary = ElicitationSummary {
        backend: match cfg.backend.kind {
            BackendKind::Mock => "mock".into(),
            BackendKind::Live => "live".into(),
        },
        sessions,
    };
    write_json(STAGE, &ctx.path(ELICITATION_SUMMARY), &summary)?;
    eprintln!(
        "elicit: {} records cached, {} new",
        cache.len(),
        cache.writes() - before
    );
    if failed > 0 {
        let first = summary
            .sessions
            .iter()
            .find_map(|s| s.failures.first().map(|f| (s, f)))
            .expect("failed > 0");
        return Err(PipelineError::new(
            STAGE,
            FailureKind::Elicitation,
            format!(
                "{failed} item(s) failed; first: {} session {} {} item {}: {}",
                first.0.model, first.0.session, first.0.dimension, first.1.item, first.1.message
            ),
        ));
    }
    Ok(())
}

pub fn aggregate(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "aggregate";
    let full = ctx.corpus(STAGE)?;
    let only = ctx.only(STAGE, &full)?;
    let corpus = ctx.scoped_corpus(&full, &only);
    let models = ctx.models(&only);
    let dims = ctx.dimensions(&corpus, &only);
    let cache_path = ctx.require(STAGE, CACHE, "elicit")?;
    let cache = RecordCache::open(&cache_path).map_err(|e| PipelineError::other(STAGE, e.to_string()))?;
    let cfg = &ctx.loaded.config;
    let template = cfg.prompt.template();

    let mut table = RatingTable::default();
    let mut unrateable = Vec::new();
    let mut missing = Vec::new();
    for model in &models {
        for session in &cfg.sessions {
            let mut records: Vec<ElicitationRecord> = Vec::new();
            for &dim in &dims {
                for s in corpus.stimuli() {
                    let Some(norm) = s.norms.get(&dim) else { continue };
                    let instructions = corpus.instructions(&s.study_id, dim).unwrap_or_default();
                    let prompt = build_prompt(instructions, s, dim, norm.scale, &template)
                        .map_err(|e| PipelineError::config(STAGE, e.to_string()))?;
                    let key = RecordKey {
                        model_name: model.clone(),
                        session_id: session.clone(),
                        study_id: s.study_id.clone(),
                        item_id: s.item_id.clone(),
                        dimension: dim,
                        prompt_hash: prompt.prompt_hash(),
                    };
                    match cache.get(&key) {
                        Some(r) => records.push(r),
                        None => missing.push(key.to_string()),
                    }
                }
            }
            let r = aggregate_session(&records, &corpus).map_err(|e| PipelineError::other(STAGE, e.to_string()))?;
            table.extend(r.table);
            unrateable.extend(r.unrateable);
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::missing(
            STAGE,
            format!(
                "{} record(s) are not in the cache (first: {}); run `elicit` first",
                missing.len(),
                missing[0]
            ),
        ));
    }
    clear_dir(STAGE, &ctx.path("ratings"))?;
    write_with(STAGE, &ctx.path(RATINGS), |buf| table.write_csv(buf))?;
    let human = RatingTable::human(&corpus).filter(|r| dims.contains(&r.dimension));
    write_with(STAGE, &ctx.path(HUMAN_RATINGS), |buf| human.write_csv(buf))?;
    write_with(STAGE, &ctx.path(UNRATEABLE), |buf| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["model", "session_id", "study_id", "item_id", "dimension", "dropped"])?;
        for u in &unrateable {
            w.write_record([
                u.key.model_name.as_str(),
                u.key.session_id.as_str(),
                u.key.study_id.as_str(),
                u.key.item_id.as_str(),
                u.key.dimension.as_str(),
                &format_dropped(&u.dropped),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for u in &unrateable {
        ctx.notice(STAGE, format!("{} is unrateable: {}", u.key, format_dropped(&u.dropped)));
    }
    eprintln!("aggregate: {} ratings, {} unrateable", table.len(), unrateable.len());
    Ok(())
}

/// Human and machine ratings restricted to the run's scope, on their
/// native scales.
struct Tables {
    corpus: StudyCorpus,
    human: RatingTable,
    machine: RatingTable,
    dims: Vec<Dimension>,
}

fn load_tables(ctx: &Context, stage: &'static str) -> Result<Tables> {
    let full = ctx.corpus(stage)?;
    let only = ctx.only(stage, &full)?;
    let corpus = ctx.scoped_corpus(&full, &only);
    let models = ctx.models(&only);
    let dims = ctx.dimensions(&corpus, &only);
    let load = |rel: &str| -> Result<RatingTable> {
        let p = ctx.require(stage, rel, "aggregate")?;
        RatingTable::load(&p).map_err(|e| PipelineError::other(stage, format!("{}: {e}", p.display())))
    };
    let items: BTreeSet<_> = corpus.stimuli().iter().map(|s| s.item_ref()).collect();
    let human = load(HUMAN_RATINGS)?.filter(|r| dims.contains(&r.dimension) && items.contains(&r.item_ref()));
    let machine = load(RATINGS)?.filter(|r| {
        models.contains(&r.model)
            && ctx.loaded.config.sessions.contains(&r.session_id)
            && dims.contains(&r.dimension)
            && items.contains(&r.item_ref())
    });
    if machine.is_empty() {
        return Err(PipelineError::missing(
            stage,
            "no machine ratings in scope; run `aggregate` for the configured models first",
        ));
    }
    Ok(Tables {
        corpus,
        human,
        machine,
        dims,
    })
}

fn standardized(stage: &'static str, t: &RatingTable, corpus: &StudyCorpus, ctx: &Context) -> Result<RatingTable> {
    t.standardized(corpus, ctx.loaded.config.scale())
        .map_err(|e| PipelineError::other(stage, e.to_string()))
}

pub fn validate(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "validate";
    let t = load_tables(ctx, STAGE)?;
    // studies differ in scale, so pooled ranks are taken on the common one
    let human = standardized(STAGE, &t.human, &t.corpus, ctx)?;
    let machine = standardized(STAGE, &t.machine, &t.corpus, ctx)?;
    let mut tables = vec![validity_table(&human, &machine, &t.corpus, None)];
    for key in ctx.loaded.config.partitions() {
        tables.push(validity_table(&human, &machine, &t.corpus, Some(key)));
    }
    if !tables[0].cells.iter().any(|c| c.result.is_some()) {
        let why = tables[0]
            .cells
            .iter()
            .find_map(|c| c.note.clone())
            .unwrap_or_else(|| "no item has both human and machine ratings".into());
        return Err(PipelineError::degenerate(
            STAGE,
            format!("no overall validity correlation can be computed: {why}"),
        ));
    }
    for table in &tables {
        for n in &table.notices {
            ctx.notice(STAGE, format!("{}: {n}", table.partition));
        }
        for c in &table.cells {
            if c.result.is_none() {
                ctx.notice(
                    STAGE,
                    format!(
                        "{} {} {} {}: {}",
                        table.partition,
                        c.group,
                        c.dimension,
                        c.model,
                        c.note.as_deref().unwrap_or("unavailable")
                    ),
                );
            }
        }
    }
    clear_dir(STAGE, &ctx.path(VALIDITY_DIR))?;
    for table in &tables {
        let p = ctx.path(&format!("{VALIDITY_DIR}/{}.csv", table.partition));
        write_with(STAGE, &p, |buf| table.write_csv(buf))?;
    }
    let doc = ValidityDoc {
        scale: ctx.loaded.config.scale(),
        tables,
    };
    write_json(STAGE, &ctx.path(VALIDITY), &doc)?;
    eprintln!("validate: {} overall cells", doc.tables[0].cells.len());
    Ok(())
}

/// Skipped (with a reason) when the config has a single session.
pub fn reliability(ctx: &mut Context, strict: bool) -> Result<()> {
    const STAGE: &str = "reliability";
    let sessions = ctx.loaded.config.sessions.clone();
    clear_dir(STAGE, &ctx.path(RELIABILITY_DIR))?;
    if sessions.len() < 2 {
        let why = format!("needs two sessions, the config lists {}", sessions.len());
        if strict {
            return Err(PipelineError::config(STAGE, why));
        }
        ctx.notice(STAGE, format!("skipped: {why}"));
        let doc = ReliabilityDoc {
            scale: ctx.loaded.config.scale(),
            table: None,
            skipped: Some(why),
        };
        return write_json(STAGE, &ctx.path(RELIABILITY), &doc);
    }
    if sessions.len() > 2 {
        ctx.notice(
            STAGE,
            format!("comparing sessions {} and {}; later sessions are ignored", sessions[0], sessions[1]),
        );
    }
    let t = load_tables(ctx, STAGE)?;
    let machine = standardized(STAGE, &t.machine, &t.corpus, ctx)?;
    let a = machine.filter(|r| r.session_id == sessions[0]);
    let b = machine.filter(|r| r.session_id == sessions[1]);
    let table = test_retest(&a, &b, &t.corpus).map_err(|e| PipelineError::degenerate(STAGE, e.to_string()))?;
    for c in table.cells.iter().filter(|c| c.result.is_none()) {
        ctx.notice(
            STAGE,
            format!(
                "{} {} {}: {}",
                c.dimension,
                c.language,
                c.model,
                c.note.as_deref().unwrap_or("unavailable")
            ),
        );
    }
    write_with(STAGE, &ctx.path(RELIABILITY_CSV), |buf| table.write_csv(buf))?;
    let doc = ReliabilityDoc {
        scale: ctx.loaded.config.scale(),
        table: Some(table),
        skipped: None,
    };
    write_json(STAGE, &ctx.path(RELIABILITY), &doc)?;
    eprintln!("reliability: sessions {} vs {}", sessions[0], sessions[1]);
    Ok(())
}

pub fn error_analysis(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "error-analysis";
    let t = load_tables(ctx, STAGE)?;
    let scale = ctx.loaded.config.scale();
    let errors: ErrorTable = absolute_error(&t.human, &t.machine, scale, &t.corpus)
        .map_err(|e| PipelineError::degenerate(STAGE, e.to_string()))?;
    if errors.rows.is_empty() {
        return Err(PipelineError::degenerate(
            STAGE,
            "no item has both a human norm and a machine rating",
        ));
    }
    let analysis = error_model(&errors).map_err(|e| PipelineError::degenerate(STAGE, e.to_string()))?;
    if !errors.unmatched.is_empty() {
        ctx.notice(
            STAGE,
            format!("{} machine rating(s) have no human norm and are left out", errors.unmatched.len()),
        );
    }
    if let Some(n) = &analysis.study_intercept_note {
        ctx.notice(STAGE, n);
    }
    clear_dir(STAGE, &ctx.path(ERRORS_DIR))?;
    write_with(STAGE, &ctx.path("errors/absolute_error.csv"), |buf| errors.write_csv(buf))?;
    write_with(STAGE, &ctx.path("errors/mean_error.csv"), |buf| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["dimension", "model", "n", "mean_error"])?;
        for m in &analysis.mean_errors {
            w.write_record([m.dimension.to_string(), m.model.clone(), m.n.to_string(), m.mean.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_with(STAGE, &ctx.path("errors/coefficients.csv"), |buf| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["term", "estimate", "se", "t_value", "p_value"])?;
        let o = &analysis.ols;
        for (i, c) in o.columns.iter().enumerate() {
            w.write_record([
                c.name.clone(),
                o.coefficients[i].to_string(),
                o.standard_errors[i].to_string(),
                o.t_values[i].to_string(),
                o.p_values[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut trends = vec![("model", &analysis.by_model), ("dimension", &analysis.by_dimension)];
    if let Some(t) = &analysis.study_intercept_by_model {
        trends.push(("model_study_intercept", t));
    }
    for (name, table) in trends {
        write_with(STAGE, &ctx.path(&format!("errors/trend_by_{name}.csv")), |buf| -> csv::Result<()> {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["kind", "group", "versus", "estimate", "se", "t_value", "p_value", "df"])?;
            for s in &table.slopes {
                w.write_record([
                    "slope".to_string(),
                    s.group.clone(),
                    String::new(),
                    s.slope.to_string(),
                    s.se.to_string(),
                    s.t_value.to_string(),
                    s.p_value.to_string(),
                    table.df.to_string(),
                ])?;
            }
            for c in &table.contrasts {
                w.write_record([
                    "contrast".to_string(),
                    c.first.clone(),
                    c.second.clone(),
                    c.estimate.to_string(),
                    c.se.to_string(),
                    c.t_value.to_string(),
                    c.p_value.to_string(),
                    table.df.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    let doc = ErrorDoc {
        scale,
        n_rows: errors.rows.len(),
        unmatched: errors.unmatched.clone(),
        analysis,
    };
    write_json(STAGE, &ctx.path(ERROR_MODEL), &doc)?;
    eprintln!("error-analysis: {} rows, {}", doc.n_rows, doc.analysis.formula);
    Ok(())
}

pub fn substitute(ctx: &mut Context) -> Result<()> {
    const STAGE: &str = "substitute";
    clear_dir(STAGE, &ctx.path(SUBSTITUTION_DIR))?;
    let responses = ctx.loaded.config.analysis.responses.clone();
    if responses.is_empty() {
        let why = "no response datasets configured".to_string();
        ctx.notice(STAGE, format!("skipped: {why}"));
        let doc = SubstitutionDoc {
            analyses: Vec::new(),
            skipped: Some(why),
        };
        return write_json(STAGE, &ctx.path(SUBSTITUTION), &doc);
    }
    let t = load_tables(ctx, STAGE)?;
    let mut analyses = Vec::new();
    for r in &responses {
        if !t.dims.contains(&r.dimension) || t.corpus.study(&r.study).is_none() {
            ctx.notice(
                STAGE,
                format!("{}: {} / {} is outside this run's scope; skipped", r.name, r.study, r.dimension),
            );
            continue;
        }
        let data = ResponseDataset::load(&r.path, r.measure_kind()?, r.transform)
            .map_err(|e| PipelineError::config(STAGE, format!("{}: {e}", r.name)))?;
        let mut sets: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut add = |table: &RatingTable, fixed_source: Option<&str>| {
            let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
            for row in &table.rows {
                if row.study_id == r.study && row.dimension == r.dimension {
                    let src = fixed_source.unwrap_or(&row.model).to_string();
                    let e = acc.entry((src, row.item_id.clone())).or_insert((0.0, 0));
                    e.0 += row.rating;
                    e.1 += 1;
                }
            }
            for ((src, item), (s, n)) in acc {
                sets.entry(src).or_default().insert(item, s / n as f64);
            }
        };
        add(&t.human, Some(HUMAN_SOURCE));
        add(&t.machine, None);
        if !sets.contains_key(HUMAN_SOURCE) {
            return Err(PipelineError::degenerate(
                STAGE,
                format!("{}: study {} has no human {} norms", r.name, r.study, r.dimension),
            ));
        }
        // compare every source on the same items
        let items = data.item_ids();
        let covered: BTreeSet<String> = items
            .iter()
            .filter(|i| sets.values().all(|s| s.contains_key(*i)))
            .cloned()
            .collect();
        let mut notices = Vec::new();
        if covered.len() < items.len() {
            let dropped: Vec<&String> = items.difference(&covered).collect();
            let msg = format!(
                "{} item(s) lack a rating from at least one source and are left out: {}",
                dropped.len(),
                dropped.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ")
            );
            ctx.notice(STAGE, format!("{}: {msg}", r.name));
            notices.push(msg);
        }
        let data = data.restrict_items(&covered);
        let table = substitution_compare(&data, &sets, &r.spec()?, HUMAN_SOURCE)
            .map_err(|e| PipelineError::degenerate(STAGE, format!("{}: {e}", r.name)))?;
        write_with(STAGE, &ctx.path(&format!("{SUBSTITUTION_DIR}/{}.csv", r.name)), |buf| -> csv::Result<()> {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record([
                "source",
                "beta",
                "se",
                "t_value",
                "p_value",
                "df",
                "aic_ml",
                "log_likelihood_ml",
                "aic_rank",
                "r2_marginal",
                "r2_conditional",
                "same_direction",
                "n_obs",
            ])?;
            for row in &table.rows {
                w.write_record([
                    row.source.clone(),
                    row.beta.to_string(),
                    row.se.to_string(),
                    row.t_value.to_string(),
                    row.p_value.to_string(),
                    row.df.to_string(),
                    row.aic_ml.to_string(),
                    row.log_likelihood_ml.to_string(),
                    row.aic_rank.to_string(),
                    row.r2_marginal.to_string(),
                    row.r2_conditional.to_string(),
                    row.same_direction.to_string(),
                    row.n_obs.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        eprintln!("substitute: {} fitted for {} sources", r.name, table.rows.len());
        analyses.push(SubstitutionEntry {
            name: r.name.clone(),
            study: r.study.clone(),
            dimension: r.dimension,
            measure: r.measure_kind()?.to_string(),
            table,
            notices,
        });
    }
    write_json(
        STAGE,
        &ctx.path(SUBSTITUTION),
        &SubstitutionDoc {
            analyses,
            skipped: None,
        },
    )
}
