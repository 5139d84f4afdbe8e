//! Stimulus sets with human norms.
//!
//! A corpus is ingested from a delimited file with one row per
//! item × dimension, plus a companion TOML document carrying the
//! instruction text each study gave its human raters. Human means are
//! kept on the study's native scale; [`standardize`] maps them onto a
//! common scale when an analysis pools studies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STIMULUS_COLUMNS: [&str; 11] = [
    "study_id",
    "item_id",
    "text",
    "language",
    "item_class",
    "subset",
    "dimension",
    "human_mean",
    "n_raters",
    "scale_min",
    "scale_max",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("line {line}, column `{column}`: {message}")]
    MalformedRow {
        line: u64,
        column: String,
        message: String,
    },
    #[error("line {line}: duplicate row for study `{study_id}`, item `{item_id}`, dimension {dimension}")]
    DuplicateItem {
        line: u64,
        study_id: String,
        item_id: String,
        dimension: Dimension,
    },
    #[error("line {line}: human mean {value} for `{study_id}`/`{item_id}` lies outside the {scale} scale")]
    RatingOutOfScale {
        line: u64,
        study_id: String,
        item_id: String,
        value: f64,
        scale: LikertScale,
    },
    #[error("line {line}: study `{study_id}` is not declared in the instruction config")]
    UndeclaredStudy { line: u64, study_id: String },
    #[error("study `{study_id}` rates {dimension} but declares no instruction text for it")]
    MissingInstructions {
        study_id: String,
        dimension: Dimension,
    },
    #[error("study `{study_id}` declares {dimension} on both {first} and {second}")]
    ScaleConflict {
        study_id: String,
        dimension: Dimension,
        first: LikertScale,
        second: LikertScale,
    },
    #[error("unsupported Likert scale {min}..{max}: only 5-, 6- and 7-point scales starting at 1 are accepted")]
    UnsupportedScale { min: i64, max: i64 },
    #[error("value {value} lies outside the {scale} scale")]
    ValueOutOfBounds { value: f64, scale: LikertScale },
    #[error("unknown partition key `{0}` (expected class, subset, language or dimension)")]
    UnknownPartitionKey(String),
    #[error("instruction config: {0}")]
    Instructions(String),
}

/// Integer rating scale. Only the scales used by the source rating studies
/// are constructible: 1–5, 1–6 and 1–7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(i64, i64)", into = "(i64, i64)")]
pub struct LikertScale {
    min_point: u8,
    max_point: u8,
}

impl LikertScale {
    pub const FIVE: LikertScale = LikertScale { min_point: 1, max_point: 5 };
    pub const SIX: LikertScale = LikertScale { min_point: 1, max_point: 6 };
    pub const SEVEN: LikertScale = LikertScale { min_point: 1, max_point: 7 };

    pub fn new(min_point: i64, max_point: i64) -> Result<Self, CorpusError> {
        match (min_point, max_point) {
            (1, 5) => Ok(Self::FIVE),
            (1, 6) => Ok(Self::SIX),
            (1, 7) => Ok(Self::SEVEN),
            _ => Err(CorpusError::UnsupportedScale {
                min: min_point,
                max: max_point,
            }),
        }
    }

    /// Seven-point is the common target; `points` counts scale positions.
    pub fn with_points(points: i64) -> Result<Self, CorpusError> {
        Self::new(1, points)
    }

    pub fn min_point(self) -> i64 {
        i64::from(self.min_point)
    }

    pub fn max_point(self) -> i64 {
        i64::from(self.max_point)
    }

    pub fn points(self) -> i64 {
        self.max_point() - self.min_point() + 1
    }

    pub fn contains(self, value: f64) -> bool {
        value >= self.min_point() as f64 && value <= self.max_point() as f64
    }

    pub fn contains_point(self, value: i64) -> bool {
        (self.min_point()..=self.max_point()).contains(&value)
    }

    pub fn midpoint(self) -> f64 {
        (self.min_point() + self.max_point()) as f64 / 2.0
    }
}

impl TryFrom<(i64, i64)> for LikertScale {
    type Error = CorpusError;

    fn try_from((min, max): (i64, i64)) -> Result<Self, Self::Error> {
        Self::new(min, max)
    }
}

impl From<LikertScale> for (i64, i64) {
    fn from(s: LikertScale) -> Self {
        (s.min_point(), s.max_point())
    }
}

impl fmt::Display for LikertScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.min_point, self.max_point)
    }
}

/// Affine, endpoint-preserving map of `value` from one scale onto another.
pub fn standardize(value: f64, from: LikertScale, to: LikertScale) -> Result<f64, CorpusError> {
    if !value.is_finite() || !from.contains(value) {
        return Err(CorpusError::ValueOutOfBounds { value, scale: from });
    }
    if from == to {
        return Ok(value);
    }
    let span_from = (from.max_point() - from.min_point()) as f64;
    let span_to = (to.max_point() - to.min_point()) as f64;
    let out = (value - from.min_point() as f64) * span_to / span_from + to.min_point() as f64;
    // rounding can push an endpoint a few ulps outside
    Ok(out.clamp(to.min_point() as f64, to.max_point() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Familiarity,
    Imageability,
    Comprehensibility,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Familiarity,
        Dimension::Imageability,
        Dimension::Comprehensibility,
    ];

    /// Gloss used when the human raters were asked about this dimension.
    pub fn definition(self) -> &'static str {
        match self {
            Dimension::Familiarity => "Frequency of experience of the expression",
            Dimension::Imageability => "Ease with which each expression evoked a visual mental image",
            Dimension::Comprehensibility => "How suitable or natural the expression is",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Familiarity => "familiarity",
            Dimension::Imageability => "imageability",
            Dimension::Comprehensibility => "comprehensibility",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "familiarity" => Ok(Dimension::Familiarity),
            "imageability" => Ok(Dimension::Imageability),
            "comprehensibility" => Ok(Dimension::Comprehensibility),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    English,
    Italian,
    Other(String),
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::English => f.write_str("English"),
            Language::Italian => f.write_str("Italian"),
            Language::Other(tag) => f.write_str(tag),
        }
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty language".into());
        }
        Ok(match s.to_ascii_lowercase().as_str() {
            "english" | "en" => Language::English,
            "italian" | "it" => Language::Italian,
            _ => Language::Other(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemClass {
    Metaphor,
    Literal,
    Anomalous,
}

impl fmt::Display for ItemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemClass::Metaphor => "metaphor",
            ItemClass::Literal => "literal",
            ItemClass::Anomalous => "anomalous",
        })
    }
}

impl FromStr for ItemClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "metaphor" => Ok(ItemClass::Metaphor),
            "literal" => Ok(ItemClass::Literal),
            "anomalous" => Ok(ItemClass::Anomalous),
            other => Err(format!("unknown item class `{other}`")),
        }
    }
}

/// (study, item) pair identifying a stimulus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemRef {
    pub study_id: String,
    pub item_id: String,
}

impl ItemRef {
    pub fn new(study_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Self {
            study_id: study_id.into(),
            item_id: item_id.into(),
        }
    }
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.study_id, self.item_id)
    }
}

/// Human norm for one dimension. `mean` is absent for items that are in
/// scope for elicitation but were never rated by humans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionNorm {
    pub scale: LikertScale,
    pub mean: Option<f64>,
    pub n_raters: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub study_id: String,
    pub item_id: String,
    pub text: String,
    pub language: Language,
    pub item_class: ItemClass,
    pub subset: Option<String>,
    pub norms: BTreeMap<Dimension, DimensionNorm>,
}

impl Stimulus {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef::new(&self.study_id, &self.item_id)
    }

    pub fn human_mean(&self, dimension: Dimension) -> Option<f64> {
        self.norms.get(&dimension).and_then(|n| n.mean)
    }

    /// Human mean mapped onto `to`, if the item has one for `dimension`.
    pub fn standardized_mean(&self, dimension: Dimension, to: LikertScale) -> Option<f64> {
        let norm = self.norms.get(&dimension)?;
        let mean = norm.mean?;
        standardize(mean, norm.scale, to).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub scales: BTreeMap<Dimension, LikertScale>,
    pub instructions: BTreeMap<Dimension, String>,
}

/// Instruction texts keyed by study and dimension, as read from the
/// companion config:
///
/// ```toml
/// [studies.campbell_raney]
/// familiarity = "Rate how often you have encountered ..."
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    #[serde(default)]
    pub studies: BTreeMap<String, BTreeMap<Dimension, String>>,
}

impl InstructionSet {
    pub fn from_toml_str(s: &str) -> Result<Self, CorpusError> {
        toml::from_str(s).map_err(|e| CorpusError::Instructions(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn insert(&mut self, study_id: &str, dimension: Dimension, text: impl Into<String>) {
        self.studies
            .entry(study_id.to_string())
            .or_default()
            .insert(dimension, text.into());
    }

    pub fn get(&self, study_id: &str, dimension: Dimension) -> Option<&str> {
        self.studies
            .get(study_id)
            .and_then(|m| m.get(&dimension))
            .map(String::as_str)
    }
}

/// One parsed input row, before it is merged into a stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusRow {
    pub study_id: String,
    pub item_id: String,
    pub text: String,
    pub language: Language,
    pub item_class: ItemClass,
    pub subset: Option<String>,
    pub dimension: Dimension,
    pub human_mean: Option<f64>,
    pub n_raters: Option<u32>,
    pub scale: LikertScale,
}

/// Validated, immutable corpus. Stimuli keep the order of first appearance
/// in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCorpus {
    studies: BTreeMap<String, Study>,
    stimuli: Vec<Stimulus>,
}

impl StudyCorpus {
    pub fn studies(&self) -> &BTreeMap<String, Study> {
        &self.studies
    }

    pub fn study(&self, id: &str) -> Option<&Study> {
        self.studies.get(id)
    }

    pub fn stimuli(&self) -> &[Stimulus] {
        &self.stimuli
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn get(&self, item: &ItemRef) -> Option<&Stimulus> {
        self.stimuli
            .iter()
            .find(|s| s.study_id == item.study_id && s.item_id == item.item_id)
    }

    pub fn instructions(&self, study_id: &str, dimension: Dimension) -> Option<&str> {
        self.studies
            .get(study_id)
            .and_then(|s| s.instructions.get(&dimension))
            .map(String::as_str)
    }

    pub fn dimensions(&self) -> BTreeSet<Dimension> {
        self.studies
            .values()
            .flat_map(|s| s.scales.keys().copied())
            .collect()
    }

    /// Restrict to stimuli satisfying `keep`; studies left without stimuli
    /// are dropped.
    pub fn filter(&self, mut keep: impl FnMut(&Stimulus) -> bool) -> StudyCorpus {
        let stimuli: Vec<Stimulus> = self.stimuli.iter().filter(|s| keep(s)).cloned().collect();
        let used: BTreeSet<&str> = stimuli.iter().map(|s| s.study_id.as_str()).collect();
        let studies = self
            .studies
            .iter()
            .filter(|(id, _)| used.contains(id.as_str()))
            .map(|(id, s)| (id.clone(), s.clone()))
            .collect();
        StudyCorpus { studies, stimuli }
    }

    /// Number of item × dimension rows the corpus was built from.
    pub fn row_count(&self) -> usize {
        self.stimuli.iter().map(|s| s.norms.len()).sum()
    }
}

/// Accumulates rows, enforcing the corpus invariants as it goes.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    stimuli: Vec<Stimulus>,
    index: BTreeMap<ItemRef, usize>,
    scales: BTreeMap<String, BTreeMap<Dimension, LikertScale>>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// `line` is only used for error messages.
    pub fn push(&mut self, line: u64, row: StimulusRow) -> Result<(), CorpusError> {
        if let Some(mean) = row.human_mean {
            if !mean.is_finite() || !row.scale.contains(mean) {
                return Err(CorpusError::RatingOutOfScale {
                    line,
                    study_id: row.study_id,
                    item_id: row.item_id,
                    value: mean,
                    scale: row.scale,
                });
            }
        }
        if row.subset.is_some() && row.item_class != ItemClass::Metaphor {
            return Err(CorpusError::MalformedRow {
                line,
                column: "subset".into(),
                message: format!("subset tags are only allowed on metaphors, item class is {}", row.item_class),
            });
        }

        let study_scales = self.scales.entry(row.study_id.clone()).or_default();
        match study_scales.get(&row.dimension) {
            Some(&declared) if declared != row.scale => {
                return Err(CorpusError::ScaleConflict {
                    study_id: row.study_id,
                    dimension: row.dimension,
                    first: declared,
                    second: row.scale,
                })
            }
            Some(_) => {}
            None => {
                study_scales.insert(row.dimension, row.scale);
            }
        }

        let key = ItemRef::new(&row.study_id, &row.item_id);
        let norm = DimensionNorm {
            scale: row.scale,
            mean: row.human_mean,
            n_raters: row.n_raters,
        };
        match self.index.get(&key) {
            Some(&idx) => {
                let existing = &mut self.stimuli[idx];
                let mismatch = if existing.text != row.text {
                    Some("text")
                } else if existing.language != row.language {
                    Some("language")
                } else if existing.item_class != row.item_class {
                    Some("item_class")
                } else if existing.subset != row.subset {
                    Some("subset")
                } else {
                    None
                };
                if let Some(column) = mismatch {
                    return Err(CorpusError::MalformedRow {
                        line,
                        column: column.into(),
                        message: format!("value differs from an earlier row for {key}"),
                    });
                }
                if existing.norms.contains_key(&row.dimension) {
                    return Err(CorpusError::DuplicateItem {
                        line,
                        study_id: row.study_id,
                        item_id: row.item_id,
                        dimension: row.dimension,
                    });
                }
                existing.norms.insert(row.dimension, norm);
            }
            None => {
                self.index.insert(key, self.stimuli.len());
                self.stimuli.push(Stimulus {
                    study_id: row.study_id,
                    item_id: row.item_id,
                    text: row.text,
                    language: row.language,
                    item_class: row.item_class,
                    subset: row.subset,
                    norms: BTreeMap::from([(row.dimension, norm)]),
                });
            }
        }
        Ok(())
    }

    pub fn build(self, instructions: &InstructionSet) -> Result<StudyCorpus, CorpusError> {
        let mut studies = BTreeMap::new();
        for (study_id, scales) in self.scales {
            let declared = instructions
                .studies
                .get(&study_id)
                .ok_or_else(|| CorpusError::UndeclaredStudy { line: 0, study_id: study_id.clone() })?;
            let mut texts = BTreeMap::new();
            for dimension in scales.keys() {
                let text = declared.get(dimension).map(|t| t.trim()).unwrap_or("");
                if text.is_empty() {
                    return Err(CorpusError::MissingInstructions {
                        study_id: study_id.clone(),
                        dimension: *dimension,
                    });
                }
                texts.insert(*dimension, text.to_string());
            }
            studies.insert(
                study_id.clone(),
                Study {
                    id: study_id,
                    scales,
                    instructions: texts,
                },
            );
        }
        Ok(StudyCorpus {
            studies,
            stimuli: self.stimuli,
        })
    }
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize) -> &'r str {
    record.get(idx).unwrap_or("").trim()
}

fn parse_row(line: u64, record: &csv::StringRecord) -> Result<StimulusRow, CorpusError> {
    let malformed = |column: &str, message: String| CorpusError::MalformedRow {
        line,
        column: column.to_string(),
        message,
    };
    if record.len() != STIMULUS_COLUMNS.len() {
        return Err(malformed(
            "*",
            format!("expected {} fields, found {}", STIMULUS_COLUMNS.len(), record.len()),
        ));
    }
    let required = |idx: usize| -> Result<String, CorpusError> {
        let v = field(record, idx);
        if v.is_empty() {
            Err(malformed(STIMULUS_COLUMNS[idx], "value is required".into()))
        } else {
            Ok(v.to_string())
        }
    };
    let study_id = required(0)?;
    let item_id = required(1)?;
    let text = required(2)?;
    let language: Language = field(record, 3).parse().map_err(|e| malformed("language", e))?;
    let item_class: ItemClass = field(record, 4).parse().map_err(|e| malformed("item_class", e))?;
    let subset = Some(field(record, 5)).filter(|s| !s.is_empty()).map(str::to_string);
    let dimension: Dimension = field(record, 6).parse().map_err(|e| malformed("dimension", e))?;
    let human_mean = match field(record, 7) {
        "" => None,
        v => Some(
            v.parse::<f64>()
                .map_err(|e| malformed("human_mean", format!("`{v}`: {e}")))?,
        ),
    };
    let n_raters = match field(record, 8) {
        "" => None,
        v => Some(
            v.parse::<u32>()
                .map_err(|e| malformed("n_raters", format!("`{v}`: {e}")))?,
        ),
    };
    let int = |idx: usize| -> Result<i64, CorpusError> {
        let v = field(record, idx);
        v.parse::<i64>()
            .map_err(|e| malformed(STIMULUS_COLUMNS[idx], format!("`{v}`: {e}")))
    };
    let scale = LikertScale::new(int(9)?, int(10)?).map_err(|e| malformed("scale_max", e.to_string()))?;
    Ok(StimulusRow {
        study_id,
        item_id,
        text,
        language,
        item_class,
        subset,
        dimension,
        human_mean,
        n_raters,
        scale,
    })
}

/// Parse stimulus rows from any reader. Undeclared studies are reported
/// against the first line that mentions them.
pub fn read_corpus<R: std::io::Read>(reader: R, instructions: &InstructionSet) -> Result<StudyCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| CorpusError::Csv { line: 1, source })?
        .clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != STIMULUS_COLUMNS {
        return Err(CorpusError::MalformedRow {
            line: 1,
            column: "*".into(),
            message: format!("header must be `{}`", STIMULUS_COLUMNS.join(",")),
        });
    }

    let mut builder = CorpusBuilder::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(source) => return Err(CorpusError::Csv { line, source }),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(line);
        let row = parse_row(line, &record)?;
        if !instructions.studies.contains_key(&row.study_id) {
            return Err(CorpusError::UndeclaredStudy {
                line,
                study_id: row.study_id,
            });
        }
        builder.push(line, row)?;
    }
    builder.build(instructions)
}

pub fn load_corpus(path: &Path, instructions: &InstructionSet) -> Result<StudyCorpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(std::io::BufReader::new(file), instructions)
}

/// Emit the corpus in the ingestion format. Re-reading the output yields
/// an equal corpus.
pub fn write_corpus<W: std::io::Write>(corpus: &StudyCorpus, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(STIMULUS_COLUMNS)?;
    for s in &corpus.stimuli {
        for (dimension, norm) in &s.norms {
            wtr.write_record([
                s.study_id.clone(),
                s.item_id.clone(),
                s.text.clone(),
                s.language.to_string(),
                s.item_class.to_string(),
                s.subset.clone().unwrap_or_default(),
                dimension.to_string(),
                norm.mean.map(|m| m.to_string()).unwrap_or_default(),
                norm.n_raters.map(|n| n.to_string()).unwrap_or_default(),
                norm.scale.min_point().to_string(),
                norm.scale.max_point().to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKey {
    Class,
    Subset,
    Language,
    /// Groups item × dimension availability: an item appears in the group of
    /// every dimension it has a human mean for.
    DimensionAvailability,
}

impl FromStr for PartitionKey {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "class" => Ok(PartitionKey::Class),
            "subset" => Ok(PartitionKey::Subset),
            "language" => Ok(PartitionKey::Language),
            "dimension" | "dimension-availability" => Ok(PartitionKey::DimensionAvailability),
            other => Err(CorpusError::UnknownPartitionKey(other.to_string())),
        }
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionKey::Class => "class",
            PartitionKey::Subset => "subset",
            PartitionKey::Language => "language",
            PartitionKey::DimensionAvailability => "dimension-availability",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemGroup {
    pub name: String,
    pub items: Vec<ItemRef>,
}

/// Named item groups sorted by name; members keep corpus order.
pub fn partition(corpus: &StudyCorpus, by: PartitionKey) -> Vec<ItemGroup> {
    let mut groups: BTreeMap<String, Vec<ItemRef>> = BTreeMap::new();
    for s in &corpus.stimuli {
        let keys: Vec<String> = match by {
            PartitionKey::Class => vec![s.item_class.to_string()],
            PartitionKey::Subset => s.subset.iter().cloned().collect(),
            PartitionKey::Language => vec![s.language.to_string()],
            PartitionKey::DimensionAvailability => s
                .norms
                .iter()
                .filter(|(_, n)| n.mean.is_some())
                .map(|(d, _)| d.to_string())
                .collect(),
        };
        for k in keys {
            groups.entry(k).or_default().push(s.item_ref());
        }
    }
    groups
        .into_iter()
        .map(|(name, items)| ItemGroup { name, items })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "study_id,item_id,text,language,item_class,subset,dimension,human_mean,n_raters,scale_min,scale_max\n";

    fn instructions(studies: &[&str]) -> InstructionSet {
        let mut set = InstructionSet::default();
        for s in studies {
            for d in Dimension::ALL {
                set.insert(s, d, format!("Rate the {d} of each sentence."));
            }
        }
        set
    }

    #[test]
    fn three_rows_three_stimuli() {
        let csv = format!(
            "{HEADER}s1,1,Actors are masks,it,metaphor,,familiarity,4.2,30,1,7\n\
             s1,2,Lawyers are sharks,en,metaphor,mental,familiarity,5.5,30,1,7\n\
             s1,3,\"Cats, dogs\",en,literal,,familiarity,6.1,,1,7\n"
        );
        let corpus = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.row_count(), 3);
        assert_eq!(corpus.stimuli()[2].text, "Cats, dogs");
        assert_eq!(corpus.stimuli()[0].language, Language::Italian);
        assert_eq!(corpus.stimuli()[1].subset.as_deref(), Some("mental"));
    }

    #[test]
    fn mean_above_scale_names_the_row() {
        let csv = format!(
            "{HEADER}s1,1,A is B,en,metaphor,,familiarity,4,10,1,7\n\
             s1,2,C is D,en,metaphor,,familiarity,8,10,1,7\n"
        );
        let err = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap_err();
        match err {
            CorpusError::RatingOutOfScale { line, ref item_id, value, .. } => {
                assert_eq!(line, 3);
                assert_eq!(item_id, "2");
                assert_eq!(value, 8.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line_and_column() {
        let csv = format!("{HEADER}s1,1,A is B,en,metaphor,,familiarity,high,10,1,7\n");
        let err = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRow { line: 2, ref column, .. } if column == "human_mean"));
    }

    #[test]
    fn duplicate_item_dimension_rejected() {
        let csv = format!(
            "{HEADER}s1,1,A is B,en,metaphor,,familiarity,4,10,1,7\n\
             s1,1,A is B,en,metaphor,,familiarity,5,10,1,7\n"
        );
        let err = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateItem { line: 3, .. }));
    }

    #[test]
    fn undeclared_study_rejected() {
        let csv = format!("{HEADER}ghost,1,A is B,en,metaphor,,familiarity,4,10,1,7\n");
        let err = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap_err();
        assert!(matches!(err, CorpusError::UndeclaredStudy { line: 2, .. }));
    }

    #[test]
    fn unsupported_scale_rejected() {
        let csv = format!("{HEADER}s1,1,A is B,en,metaphor,,familiarity,4,10,0,9\n");
        assert!(read_corpus(csv.as_bytes(), &instructions(&["s1"])).is_err());
        assert!(LikertScale::new(1, 4).is_err());
        assert!(LikertScale::new(7, 1).is_err());
    }

    #[test]
    fn subset_on_literal_rejected() {
        let csv = format!("{HEADER}s1,1,A is B,en,literal,motion,familiarity,4,10,1,7\n");
        assert!(read_corpus(csv.as_bytes(), &instructions(&["s1"])).is_err());
    }

    #[test]
    fn missing_instruction_text_rejected() {
        let csv = format!("{HEADER}s1,1,A is B,en,metaphor,,imageability,4,10,1,7\n");
        let mut set = InstructionSet::default();
        set.insert("s1", Dimension::Familiarity, "x");
        let err = read_corpus(csv.as_bytes(), &set).unwrap_err();
        assert!(matches!(err, CorpusError::MissingInstructions { dimension: Dimension::Imageability, .. }));
    }

    #[test]
    fn text_is_trimmed_but_punctuation_kept() {
        let csv = format!("{HEADER}s1,1,\"  Wound is a fjord.  \",en,metaphor,,imageability,4,10,1,7\n");
        let corpus = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap();
        assert_eq!(corpus.stimuli()[0].text, "Wound is a fjord.");
    }

    #[test]
    fn standardize_examples() {
        let five = LikertScale::FIVE;
        let seven = LikertScale::SEVEN;
        assert_eq!(standardize(1.0, five, seven).unwrap(), 1.0);
        assert_eq!(standardize(3.0, five, seven).unwrap(), 4.0);
        // (4 - 1) * 6 / 5 + 1
        assert!((standardize(4.0, LikertScale::SIX, seven).unwrap() - 4.6).abs() < 1e-12);
        assert!(standardize(5.5, five, seven).is_err());
    }

    #[test]
    fn partition_by_class_counts() {
        let mut csv = HEADER.to_string();
        for i in 0..10 {
            csv.push_str(&format!("s1,m{i},M {i},en,metaphor,,familiarity,4,10,1,7\n"));
        }
        for i in 0..5 {
            csv.push_str(&format!("s1,l{i},L {i},en,literal,,familiarity,4,10,1,7\n"));
        }
        let corpus = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap();
        let groups = partition(&corpus, PartitionKey::Class);
        let sizes: Vec<(String, usize)> = groups.iter().map(|g| (g.name.clone(), g.items.len())).collect();
        assert_eq!(sizes, vec![("literal".to_string(), 5), ("metaphor".to_string(), 10)]);
        assert!(partition(&corpus, PartitionKey::Subset).is_empty());
    }

    #[test]
    fn unknown_partition_key() {
        assert!(matches!(
            "colour".parse::<PartitionKey>(),
            Err(CorpusError::UnknownPartitionKey(_))
        ));
    }

    #[test]
    fn emitted_corpus_round_trips() {
        let csv = format!(
            "{HEADER}s1,1,\"A, \"\"quoted\"\" B\",en,metaphor,motion,familiarity,4.123456789012345,10,1,7\n\
             s1,1,\"A, \"\"quoted\"\" B\",en,metaphor,motion,imageability,,,1,7\n\
             s2,x,Fog of melancholy,it,metaphor,,familiarity,2.2,40,1,5\n"
        );
        let set = instructions(&["s1", "s2"]);
        let corpus = read_corpus(csv.as_bytes(), &set).unwrap();
        let mut first = Vec::new();
        write_corpus(&corpus, &mut first).unwrap();
        let again = read_corpus(first.as_slice(), &set).unwrap();
        assert_eq!(corpus, again);
        let mut second = Vec::new();
        write_corpus(&again, &mut second).unwrap();
        assert_eq!(first, second);
    }

    fn any_scale() -> impl Strategy<Value = LikertScale> {
        prop_oneof![Just(LikertScale::FIVE), Just(LikertScale::SIX), Just(LikertScale::SEVEN)]
    }

    proptest! {
        #[test]
        fn standardize_inverts(a in any_scale(), b in any_scale(), t in 0.0f64..=1.0) {
            let v = a.min_point() as f64 + t * (a.max_point() - a.min_point()) as f64;
            let there = standardize(v, a, b).unwrap();
            prop_assert!(b.contains(there));
            let back = standardize(there, b, a).unwrap();
            prop_assert!((back - v).abs() <= 1e-12);
            prop_assert_eq!(standardize(v, a, a).unwrap(), v);
        }

        #[test]
        fn standardize_monotone(a in any_scale(), b in any_scale(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let span = (a.max_point() - a.min_point()) as f64;
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let lo = standardize(1.0 + lo * span, a, b).unwrap();
            let hi = standardize(1.0 + hi * span, a, b).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn partition_groups_disjoint(classes in proptest::collection::vec(0usize..3, 1..40)) {
            let mut csv = HEADER.to_string();
            for (i, c) in classes.iter().enumerate() {
                let (class, lang) = [("metaphor", "en"), ("literal", "it"), ("anomalous", "en")][*c];
                csv.push_str(&format!("s1,{i},T{i},{lang},{class},,familiarity,3,10,1,7\n"));
            }
            let corpus = read_corpus(csv.as_bytes(), &instructions(&["s1"])).unwrap();
            for key in [PartitionKey::Class, PartitionKey::Language] {
                let groups = partition(&corpus, key);
                let mut seen = BTreeSet::new();
                for g in &groups {
                    for item in &g.items {
                        prop_assert!(seen.insert(item.clone()));
                    }
                }
                prop_assert_eq!(seen.len(), corpus.len());
                let names: Vec<_> = groups.iter().map(|g| g.name.clone()).collect();
                let mut sorted = names.clone();
                sorted.sort();
                prop_assert_eq!(names, sorted);
            }
        }
    }
}
