//! Battle records and datasets.
//!
//! A battle is one pairwise comparison: two anonymous model outputs shown
//! side by side and the vote the user submitted. Datasets keep their records
//! in a stable order so that corruption experiments can address records by
//! index and stay reproducible.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: u64, message: String },
    #[error("line {line}: model `{model}` cannot battle itself")]
    SameModel { line: u64, model: String },
    #[error("record {index}: model `{model}` is not in the roster")]
    UnknownModel { index: usize, model: String },
    #[error("invalid model id {0:?}: must be non-empty without surrounding whitespace")]
    InvalidModelId(String),
    #[error("at least 2 models are required, got {0}")]
    TooFewModels(usize),
    #[error("invalid ground-truth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Identifier of a model within a roster.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self, DataError> {
        let name = name.into();
        if name.is_empty() || name.trim() != name {
            return Err(DataError::InvalidModelId(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = DataError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> Self {
        id.0
    }
}

impl FromStr for ModelId {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ModelId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// The vote submitted for a battle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoteLabel {
    LeftWins,
    RightWins,
    Tie,
}

impl VoteLabel {
    pub const ALL: [VoteLabel; 3] = [VoteLabel::LeftWins, VoteLabel::RightWins, VoteLabel::Tie];

    /// The label after swapping the left and right sides.
    pub fn swapped(self) -> Self {
        match self {
            VoteLabel::LeftWins => VoteLabel::RightWins,
            VoteLabel::RightWins => VoteLabel::LeftWins,
            VoteLabel::Tie => VoteLabel::Tie,
        }
    }
}

/// Where a vote came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Organic,
    Apathetic,
    Adversarial,
}

/// One battle.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub prompt: Option<String>,
    pub left: ModelId,
    pub right: ModelId,
    pub label: VoteLabel,
    pub responses: Option<(String, String)>,
    pub provenance: Provenance,
}

impl PreferenceRecord {
    /// A bare battle with no prompt or responses.
    pub fn new(left: ModelId, right: ModelId, label: VoteLabel) -> Self {
        Self {
            prompt: None,
            left,
            right,
            label,
            responses: None,
            provenance: Provenance::Organic,
        }
    }

    /// The model the vote favours, if any.
    pub fn winner(&self) -> Option<&ModelId> {
        match self.label {
            VoteLabel::LeftWins => Some(&self.left),
            VoteLabel::RightWins => Some(&self.right),
            VoteLabel::Tie => None,
        }
    }

    pub fn involves(&self, model: &ModelId) -> bool {
        &self.left == model || &self.right == model
    }

    /// The same battle with sides exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            prompt: self.prompt.clone(),
            left: self.right.clone(),
            right: self.left.clone(),
            label: self.label.swapped(),
            responses: self.responses.clone().map(|(a, b)| (b, a)),
            provenance: self.provenance,
        }
    }
}

/// A validated, index-addressable collection of battles.
///
/// The roster is kept sorted by model name.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    roster: Vec<ModelId>,
    records: Vec<PreferenceRecord>,
}

impl PreferenceDataset {
    /// Builds a dataset over an explicit roster. Every record must reference
    /// roster members and two distinct models.
    pub fn new(
        roster: impl IntoIterator<Item = ModelId>,
        records: Vec<PreferenceRecord>,
    ) -> Result<Self, DataError> {
        let roster: Vec<ModelId> = roster
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (index, rec) in records.iter().enumerate() {
            if rec.left == rec.right {
                return Err(DataError::SameModel {
                    line: index as u64 + 1,
                    model: rec.left.to_string(),
                });
            }
            for side in [&rec.left, &rec.right] {
                if roster.binary_search(side).is_err() {
                    return Err(DataError::UnknownModel {
                        index,
                        model: side.to_string(),
                    });
                }
            }
        }
        Ok(Self { roster, records })
    }

    /// Builds a dataset whose roster is every model observed in `records`.
    pub fn from_records(records: Vec<PreferenceRecord>) -> Result<Self, DataError> {
        let roster: BTreeSet<ModelId> = records
            .iter()
            .flat_map(|r| [r.left.clone(), r.right.clone()])
            .collect();
        Self::new(roster, records)
    }

    pub fn roster(&self) -> &[ModelId] {
        &self.roster
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Position of `model` in the roster.
    pub fn index_of(&self, model: &ModelId) -> Option<usize> {
        self.roster.binary_search(model).ok()
    }

    /// Looks a model up by name.
    pub fn model(&self, name: &str) -> Option<&ModelId> {
        self.roster.iter().find(|m| m.as_str() == name)
    }

    pub fn into_records(self) -> Vec<PreferenceRecord> {
        self.records
    }

    /// Replaces the records, keeping the roster. Used by corruption, which
    /// never introduces new models.
    pub(crate) fn with_records(&self, records: Vec<PreferenceRecord>) -> Self {
        Self {
            roster: self.roster.clone(),
            records,
        }
    }

    /// Number of battles each roster member took part in.
    pub fn appearances(&self) -> Vec<usize> {
        let mut counts = vec![0; self.roster.len()];
        for rec in &self.records {
            for side in [&rec.left, &rec.right] {
                if let Some(i) = self.index_of(side) {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Writes the dataset as canonical JSON lines.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.records {
            let row = CanonicalRow::from(rec);
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let io = |e: std::io::Error| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let file = File::create(path).map_err(io)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_jsonl(&mut out).map_err(io)?;
        out.flush().map_err(io)
    }
}

/// Supported on-disk formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One JSON object per line: `model_a`, `model_b`, `winner` plus
    /// optional `prompt`, `response_a`, `response_b`, `provenance`.
    CanonicalJsonl,
    /// The released 55k arena CSV with one-hot winner indicator columns.
    Lmsys55kCsv,
}

impl DatasetFormat {
    /// Guesses the format from a file extension (`.csv` or JSON lines).
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Lmsys55kCsv,
            _ => DatasetFormat::CanonicalJsonl,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical_jsonl" | "jsonl" => Ok(DatasetFormat::CanonicalJsonl),
            "lmsys55k_csv" | "csv" => Ok(DatasetFormat::Lmsys55kCsv),
            other => Err(format!(
                "unknown dataset format `{other}` (expected canonical_jsonl or lmsys55k_csv)"
            )),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Winner {
    ModelA,
    ModelB,
    Tie,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalRow {
    model_a: String,
    model_b: String,
    winner: Winner,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_b: Option<String>,
    #[serde(default, skip_serializing_if = "is_organic")]
    provenance: Provenance,
}

fn is_organic(p: &Provenance) -> bool {
    *p == Provenance::Organic
}

impl From<&PreferenceRecord> for CanonicalRow {
    fn from(rec: &PreferenceRecord) -> Self {
        let (response_a, response_b) = match &rec.responses {
            Some((a, b)) => (Some(a.clone()), Some(b.clone())),
            None => (None, None),
        };
        Self {
            model_a: rec.left.to_string(),
            model_b: rec.right.to_string(),
            winner: match rec.label {
                VoteLabel::LeftWins => Winner::ModelA,
                VoteLabel::RightWins => Winner::ModelB,
                VoteLabel::Tie => Winner::Tie,
            },
            prompt: rec.prompt.clone(),
            response_a,
            response_b,
            provenance: rec.provenance,
        }
    }
}

fn model_at(line: u64, name: &str) -> Result<ModelId, DataError> {
    ModelId::new(name).map_err(|_| DataError::Schema {
        line,
        message: format!("invalid model id {name:?}"),
    })
}

fn pair_at(line: u64, a: &str, b: &str) -> Result<(ModelId, ModelId), DataError> {
    let left = model_at(line, a)?;
    let right = model_at(line, b)?;
    if left == right {
        return Err(DataError::SameModel {
            line,
            model: left.to_string(),
        });
    }
    Ok((left, right))
}

/// Parses canonical JSON lines. Blank lines are skipped.
pub fn parse_jsonl<R: Read>(reader: R) -> Result<PreferenceDataset, DataError> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let text = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let row: CanonicalRow = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let (left, right) = pair_at(line_no, &row.model_a, &row.model_b)?;
        let responses = match (row.response_a, row.response_b) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(DataError::Schema {
                    line: line_no,
                    message: "response_a and response_b must be given together".into(),
                })
            }
        };
        records.push(PreferenceRecord {
            prompt: row.prompt,
            left,
            right,
            label: match row.winner {
                Winner::ModelA => VoteLabel::LeftWins,
                Winner::ModelB => VoteLabel::RightWins,
                Winner::Tie => VoteLabel::Tie,
            },
            responses,
            provenance: row.provenance,
        });
    }
    PreferenceDataset::from_records(records)
}

fn parse_indicator(line: u64, column: &str, raw: &str) -> Result<bool, DataError> {
    match raw.trim() {
        "1" | "1.0" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "False" | "FALSE" | "" => Ok(false),
        other => Err(DataError::Parse {
            line,
            message: format!("column {column}: expected a 0/1 indicator, found {other:?}"),
        }),
    }
}

/// Parses the 55k arena CSV layout. Extra columns are ignored; `prompt`,
/// `response_a` and `response_b` are kept when present.
pub fn parse_lmsys_csv<R: Read>(reader: R) -> Result<PreferenceDataset, DataError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| {
        column(name).ok_or_else(|| DataError::Schema {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let col_a = required("model_a")?;
    let col_b = required("model_b")?;
    let indicators = [
        ("winner_model_a", required("winner_model_a")?, VoteLabel::LeftWins),
        ("winner_model_b", required("winner_model_b")?, VoteLabel::RightWins),
        ("winner_tie", required("winner_tie")?, VoteLabel::Tie),
    ];
    let col_prompt = column("prompt");
    let col_resp = column("response_a").zip(column("response_b"));

    let mut records = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let (left, right) = pair_at(line, &row[col_a], &row[col_b])?;
        let mut label = None;
        let mut set = 0;
        for (name, col, value) in indicators {
            if parse_indicator(line, name, &row[col])? {
                set += 1;
                label = Some(value);
            }
        }
        let label = match (set, label) {
            (1, Some(l)) => l,
            _ => {
                return Err(DataError::Schema {
                    line,
                    message: format!(
                        "expected exactly one of winner_model_a/winner_model_b/winner_tie set, found {set}"
                    ),
                })
            }
        };
        records.push(PreferenceRecord {
            prompt: col_prompt.map(|c| row[c].to_string()),
            left,
            right,
            label,
            responses: col_resp.map(|(a, b)| (row[a].to_string(), row[b].to_string())),
            provenance: Provenance::Organic,
        });
    }
    PreferenceDataset::from_records(records)
}

/// Reads a dataset from disk.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<PreferenceDataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    match format {
        DatasetFormat::CanonicalJsonl => parse_jsonl(file),
        DatasetFormat::Lmsys55kCsv => parse_lmsys_csv(file),
    }
}

/// Known log-strengths used to generate battles with a known answer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModelSpec {
    models: Vec<(ModelId, f64)>,
    tie_probability: f64,
}

impl GroundTruthModelSpec {
    pub fn new(
        models: impl IntoIterator<Item = (ModelId, f64)>,
        tie_probability: f64,
    ) -> Result<Self, DataError> {
        let mut models: Vec<(ModelId, f64)> = models.into_iter().collect();
        models.sort_by(|a, b| a.0.cmp(&b.0));
        if models.len() < 2 {
            return Err(DataError::TooFewModels(models.len()));
        }
        if models.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(DataError::InvalidSpec("duplicate model id".into()));
        }
        if let Some((m, _)) = models.iter().find(|(_, s)| !s.is_finite()) {
            return Err(DataError::InvalidSpec(format!("score of `{m}` is not finite")));
        }
        if !(0.0..1.0).contains(&tie_probability) {
            return Err(DataError::InvalidSpec(format!(
                "tie_probability must lie in [0, 1), got {tie_probability}"
            )));
        }
        Ok(Self {
            models,
            tie_probability,
        })
    }

    /// Convenience constructor from `(name, score)` pairs.
    pub fn from_pairs(pairs: &[(&str, f64)], tie_probability: f64) -> Result<Self, DataError> {
        let models = pairs
            .iter()
            .map(|(n, s)| Ok((ModelId::new(*n)?, *s)))
            .collect::<Result<Vec<_>, DataError>>()?;
        Self::new(models, tie_probability)
    }

    /// Reads `models.<id>.score = <real>` and an optional `tie_probability`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, DataError> {
        kv.check_keys(|k| {
            k == "tie_probability" || (k.starts_with("models.") && k.ends_with(".score"))
        })?;
        let mut models = Vec::new();
        for name in kv.groups("models") {
            let score: f64 = kv
                .parsed(&format!("models.{name}.score"))?
                .ok_or_else(|| ConfigError::Missing(format!("models.{name}.score")))?;
            models.push((ModelId::new(name)?, score));
        }
        Self::new(models, kv.parsed_or("tie_probability", 0.0)?)
    }

    /// Models sorted by name with their true scores.
    pub fn models(&self) -> &[(ModelId, f64)] {
        &self.models
    }

    pub fn tie_probability(&self) -> f64 {
        self.tie_probability
    }

    pub fn score(&self, model: &ModelId) -> Option<f64> {
        self.models.iter().find(|(m, _)| m == model).map(|(_, s)| *s)
    }

    /// Probability that `a` beats `b` given the battle is not a tie.
    pub fn win_probability(&self, a: &ModelId, b: &ModelId) -> Option<f64> {
        Some(logistic(self.score(a)? - self.score(b)?))
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generates `n` battles between uniformly chosen model pairs, voted
/// according to the Bradley-Terry probabilities of `spec`.
pub fn generate_synthetic(
    spec: &GroundTruthModelSpec,
    n: usize,
    seed: u64,
) -> Result<PreferenceDataset, DataError> {
    if n == 0 {
        return Err(DataError::InvalidSpec("battle count must be at least 1".into()));
    }
    let k = spec.models.len();
    let mut rng = seed::rng(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..k);
        let mut j = rng.gen_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let (left, s_left) = &spec.models[i];
        let (right, s_right) = &spec.models[j];
        let label = if rng.gen::<f64>() < spec.tie_probability {
            VoteLabel::Tie
        } else if rng.gen::<f64>() < logistic(s_left - s_right) {
            VoteLabel::LeftWins
        } else {
            VoteLabel::RightWins
        };
        records.push(PreferenceRecord::new(left.clone(), right.clone(), label));
    }
    PreferenceDataset::new(spec.models.iter().map(|(m, _)| m.clone()), records)
}
