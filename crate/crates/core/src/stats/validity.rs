//! Human-vs-machine validity tables and session-to-session reliability.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};

use super::rank::{spearman, CorrelationResult};
use super::StatsError;
use crate::aggregation::{RatingRow, RatingTable};
use crate::corpus::{partition, Dimension, ItemRef, Language, PartitionKey, StudyCorpus};

/// Group name used when no partition is requested.
pub const OVERALL_GROUP: &str = "overall";

/// (model, item, dimension) → mean rating over sessions.
pub(crate) type SourceMeans = BTreeMap<(String, ItemRef, Dimension), f64>;

pub(crate) fn session_means(table: &RatingTable) -> SourceMeans {
    let mut acc: BTreeMap<(String, ItemRef, Dimension), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = acc.entry((r.model.clone(), r.item_ref(), r.dimension)).or_insert((0.0, 0));
        e.0 += r.rating;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn human_means(table: &RatingTable) -> BTreeMap<(ItemRef, Dimension), f64> {
    session_means(table).into_iter().map(|((_, item, d), v)| ((item, d), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCell {
    pub group: String,
    pub dimension: Dimension,
    pub model: String,
    /// Items present in both tables for this cell.
    pub n: usize,
    /// `None` when the correlation is undefined (n < 3 or a constant side).
    pub result: Option<CorrelationResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityTable {
    /// `overall`, or the partition key used.
    pub partition: String,
    pub cells: Vec<ValidityCell>,
    /// Groups skipped because nothing joined.
    pub notices: Vec<String>,
}

const VALIDITY_COLUMNS: [&str; 9] = [
    "partition",
    "group",
    "dimension",
    "model",
    "n",
    "rho",
    "p_value",
    "significance",
    "note",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl ValidityTable {
    pub fn cell(&self, group: &str, dimension: Dimension, model: &str) -> Option<&ValidityCell> {
        self.cells
            .iter()
            .find(|c| c.group == group && c.dimension == dimension && c.model == model)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(VALIDITY_COLUMNS)?;
        for c in &self.cells {
            let r = c.result.as_ref();
            w.write_record([
                self.partition.clone(),
                c.group.clone(),
                c.dimension.to_string(),
                c.model.clone(),
                c.n.to_string(),
                fmt_opt(r.map(|r| r.rho)),
                fmt_opt(r.map(|r| r.p_value)),
                r.map(|r| r.significance_band.as_str().to_string()).unwrap_or_default(),
                c.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn correlate(x: &[f64], y: &[f64]) -> (Option<CorrelationResult>, Option<String>) {
    match spearman(x, y) {
        Ok(r) => (Some(r), None),
        Err(StatsError::TooFew { n, min }) => (None, Some(format!("unavailable: n = {n} < {min}"))),
        Err(StatsError::Degenerate(what)) => (None, Some(format!("unavailable: {what}"))),
        Err(e) => (None, Some(format!("unavailable: {e}"))),
    }
}

/// Spearman correlation of human norms against machine ratings, one cell per
/// (group, dimension, model). Machine ratings from several sessions are
/// averaged per item first. Ratings need not share a scale: only ranks
/// matter.
pub fn validity_table(
    human: &RatingTable,
    machine: &RatingTable,
    corpus: &StudyCorpus,
    group_by: Option<PartitionKey>,
) -> ValidityTable {
    let human = human_means(human);
    let machine = session_means(machine);
    let models: BTreeSet<&String> = machine.keys().map(|k| &k.0).collect();
    let groups: Vec<(String, BTreeSet<ItemRef>)> = match group_by {
        None => vec![(OVERALL_GROUP.to_string(), corpus.stimuli().iter().map(|s| s.item_ref()).collect())],
        Some(key) => partition(corpus, key)
            .into_iter()
            .map(|g| (g.name, g.items.into_iter().collect()))
            .collect(),
    };
    let mut cells = Vec::new();
    let mut notices = Vec::new();
    for (group, items) in &groups {
        let mut joined_any = false;
        let mut group_cells = Vec::new();
        for dimension in Dimension::ALL {
            for model in &models {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for item in items {
                    let h = human.get(&(item.clone(), dimension));
                    let m = machine.get(&((*model).clone(), item.clone(), dimension));
                    if let (Some(h), Some(m)) = (h, m) {
                        x.push(*h);
                        y.push(*m);
                    }
                }
                if x.is_empty() {
                    continue;
                }
                joined_any = true;
                let (result, note) = correlate(&x, &y);
                group_cells.push(ValidityCell {
                    group: group.clone(),
                    dimension,
                    model: (*model).clone(),
                    n: x.len(),
                    result,
                    note,
                });
            }
        }
        if joined_any {
            cells.extend(group_cells);
        } else {
            notices.push(format!("group {group}: no item has both human and machine ratings; skipped"));
        }
    }
    ValidityTable {
        partition: group_by.map_or(OVERALL_GROUP.to_string(), |k| k.to_string()),
        cells,
        notices,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCell {
    pub dimension: Dimension,
    pub language: Language,
    pub model: String,
    pub n: usize,
    pub result: Option<CorrelationResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub session_a: String,
    pub session_b: String,
    pub cells: Vec<ReliabilityCell>,
}

impl ReliabilityTable {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "session_a",
            "session_b",
            "dimension",
            "language",
            "model",
            "n",
            "rho",
            "p_value",
            "significance",
            "note",
        ])?;
        for c in &self.cells {
            let r = c.result.as_ref();
            w.write_record([
                self.session_a.clone(),
                self.session_b.clone(),
                c.dimension.to_string(),
                c.language.to_string(),
                c.model.clone(),
                c.n.to_string(),
                fmt_opt(r.map(|r| r.rho)),
                fmt_opt(r.map(|r| r.p_value)),
                r.map(|r| r.significance_band.as_str().to_string()).unwrap_or_default(),
                c.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn single_session(table: &RatingTable) -> String {
    let sessions = table.sessions();
    if sessions.len() == 1 {
        sessions[0].clone()
    } else {
        sessions.join("+")
    }
}

type RowKey = (String, ItemRef, Dimension);

fn keyed(table: &RatingTable) -> Result<BTreeMap<RowKey, &RatingRow>, StatsError> {
    let mut out = BTreeMap::new();
    for r in &table.rows {
        if out.insert((r.model.clone(), r.item_ref(), r.dimension), r).is_some() {
            return Err(StatsError::KeyMismatch(format!(
                "{} {} {} appears twice in one session",
                r.model,
                r.item_ref(),
                r.dimension
            )));
        }
    }
    Ok(out)
}

/// Correlate two sessions' ratings per (dimension, language, model). Both
/// tables must cover exactly the same (model, item, dimension) keys.
pub fn test_retest(
    session_a: &RatingTable,
    session_b: &RatingTable,
    corpus: &StudyCorpus,
) -> Result<ReliabilityTable, StatsError> {
    let a = keyed(session_a)?;
    let b = keyed(session_b)?;
    let describe = |k: &RowKey| format!("{}/{}/{}", k.0, k.1, k.2);
    let only_a: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).map(describe).collect();
    let only_b: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).map(describe).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        let mut parts = Vec::new();
        if !only_a.is_empty() {
            parts.push(format!("missing from second session: {}", only_a.join(", ")));
        }
        if !only_b.is_empty() {
            parts.push(format!("missing from first session: {}", only_b.join(", ")));
        }
        return Err(StatsError::KeyMismatch(parts.join("; ")));
    }
    let mut groups: BTreeMap<(Dimension, Language, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, ra) in &a {
        let stim = corpus
            .get(&key.1)
            .ok_or_else(|| StatsError::KeyMismatch(format!("item {} is not in the corpus", key.1)))?;
        let g = groups.entry((key.2, stim.language.clone(), key.0.clone())).or_default();
        g.0.push(ra.rating);
        g.1.push(b[key].rating);
    }
    let cells = groups
        .into_iter()
        .map(|((dimension, language, model), (x, y))| {
            let (result, note) = correlate(&x, &y);
            ReliabilityCell {
                dimension,
                language,
                model,
                n: x.len(),
                result,
                note,
            }
        })
        .collect();
    Ok(ReliabilityTable {
        session_a: single_session(session_a),
        session_b: single_session(session_b),
        cells,
    })
}
