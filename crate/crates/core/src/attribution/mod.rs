//! Target-model attribution via top-p membership.
//!
//! Given a candidate model and an output `y_1..y_N`, teacher-force the
//! output through the model and, at every step, ask whether the realized
//! token lies in the smallest descending-probability prefix of the
//! vocabulary whose mass reaches `p` (the top-p cover). The fraction of
//! steps inside the cover is the confidence `c`; the output is attributed to
//! the model when `c >= t`.
//!
//! Equal-probability tokens are ordered with the realized token first.
//! Under that ordering the realized token is in the cover exactly when it
//! has positive probability and the mass of strictly more probable tokens
//! is below `p`, so a trace only needs to keep two numbers per step.

pub mod corpus;
pub mod model;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    generate, greedy_decode, sample_next, train_token_model, train_with_vocabulary, Generation,
    NgramModel, SamplingParams, StationaryModel, Token, TokenModel, Vocabulary,
};

use crate::prefdata::ModelId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("output sequence is empty")]
    EmptyOutput,
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocabulary { token: Token, vocab: usize },
    #[error("character {0:?} is not in the vocabulary")]
    UnknownCharacter(char),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("distribution must be non-negative and sum to 1 (sum {0})")]
    InvalidDistribution(f64),
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
    #[error("invalid attribution parameters: p={p}, t={t} (need 0 < p <= 1, 0 <= t <= 1)")]
    InvalidParams { p: f64, t: f64 },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("no traces")]
    NoTraces,
    #[error("no traces labelled with the target `{0}`")]
    MissingPositives(String),
    #[error("no traces labelled with a model other than `{0}`")]
    MissingNegatives(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Evidence for one output token under the candidate model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenStepTrace {
    /// 1-based.
    pub step: usize,
    pub realized_token_prob: f64,
    /// Total probability of tokens strictly more probable than the realized
    /// one.
    pub cum_prob_above: f64,
}

impl TokenStepTrace {
    /// Whether the realized token is inside the top-`p` cover.
    pub fn in_cover(&self, p: f64) -> bool {
        self.realized_token_prob > 0.0 && self.cum_prob_above < p
    }
}

/// Per-step evidence for a whole output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    steps: Vec<TokenStepTrace>,
    pub true_source: Option<ModelId>,
}

impl SequenceTrace {
    /// Builds a trace from `(realized_token_prob, cum_prob_above)` pairs.
    pub fn from_pairs(
        pairs: &[(f64, f64)],
        true_source: Option<ModelId>,
    ) -> Result<Self, AttributionError> {
        if pairs.is_empty() {
            return Err(AttributionError::EmptyOutput);
        }
        let steps = pairs
            .iter()
            .enumerate()
            .map(|(i, &(prob, above))| {
                let ok = (0.0..=1.0).contains(&prob)
                    && (0.0..=1.0 + 1e-9).contains(&above)
                    && prob + above <= 1.0 + 1e-9;
                if !ok {
                    return Err(AttributionError::InvalidTrace(format!(
                        "step {}: probability {prob} with {above} above it",
                        i + 1
                    )));
                }
                Ok(TokenStepTrace {
                    step: i + 1,
                    realized_token_prob: prob,
                    cum_prob_above: above,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { steps, true_source })
    }

    pub fn steps(&self) -> &[TokenStepTrace] {
        &self.steps
    }

    /// Sequence length `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn with_source(mut self, source: Option<ModelId>) -> Self {
        self.true_source = source;
        self
    }

    /// Fraction of steps inside the top-`p` cover.
    pub fn confidence(&self, p: f64) -> f64 {
        self.steps.iter().filter(|s| s.in_cover(p)).count() as f64 / self.steps.len() as f64
    }
}

/// Probability of `realized` and the summed mass of strictly more probable
/// tokens, accumulated in descending order.
pub fn step_evidence(dist: &[f64], realized: Token) -> (f64, f64) {
    let prob = dist[realized as usize];
    let mut above: Vec<f64> = dist.iter().copied().filter(|&q| q > prob).collect();
    above.sort_by(|a, b| b.total_cmp(a));
    (prob, above.iter().sum())
}

/// Teacher-forces `output` (after `prompt`) through `model`.
pub fn trace_from_model<M: TokenModel + ?Sized>(
    model: &M,
    prompt: &[Token],
    output: &[Token],
) -> Result<SequenceTrace, AttributionError> {
    if output.is_empty() {
        return Err(AttributionError::EmptyOutput);
    }
    let vocab = model.vocab_size();
    if let Some(&token) = prompt.iter().chain(output).find(|&&t| t as usize >= vocab) {
        return Err(AttributionError::TokenOutOfVocabulary { token, vocab });
    }
    let mut context = prompt.to_vec();
    let mut steps = Vec::with_capacity(output.len());
    for (i, &tok) in output.iter().enumerate() {
        let (prob, above) = step_evidence(&model.distribution(&context), tok);
        steps.push(TokenStepTrace {
            step: i + 1,
            realized_token_prob: prob,
            cum_prob_above: above,
        });
        context.push(tok);
    }
    Ok(SequenceTrace {
        steps,
        true_source: None,
    })
}

/// Probability threshold `p` and decision threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionParams {
    p: f64,
    t: f64,
}

impl AttributionParams {
    pub fn new(p: f64, t: f64) -> Result<Self, AttributionError> {
        if !(p > 0.0 && p <= 1.0 && (0.0..=1.0).contains(&t)) {
            return Err(AttributionError::InvalidParams { p, t });
        }
        Ok(Self { p, t })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

impl Default for AttributionParams {
    fn default() -> Self {
        Self { p: 0.9, t: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionResult {
    pub confidence: f64,
    /// `true` when the output is attributed to the candidate model.
    pub decision: bool,
}

/// Confidence `c` and decision `c >= t` for a trace.
pub fn attribute(trace: &SequenceTrace, params: &AttributionParams) -> AttributionResult {
    let confidence = trace.confidence(params.p);
    AttributionResult {
        confidence,
        decision: confidence >= params.t,
    }
}

/// Intrinsic quality of the detector for one target model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorQuality {
    pub tpr: f64,
    pub tnr: f64,
    /// Mean sequence length over the labelled traces.
    pub mean_tokens: f64,
    pub positives: usize,
    pub negatives: usize,
}

struct Split<'a> {
    positives: Vec<&'a SequenceTrace>,
    negatives: Vec<&'a SequenceTrace>,
}

fn split<'a>(traces: &'a [SequenceTrace], target: &ModelId) -> Result<Split<'a>, AttributionError> {
    if traces.is_empty() {
        return Err(AttributionError::NoTraces);
    }
    let positives: Vec<_> = traces
        .iter()
        .filter(|t| t.true_source.as_ref() == Some(target))
        .collect();
    let negatives: Vec<_> = traces
        .iter()
        .filter(|t| t.true_source.as_ref().is_some_and(|s| s != target))
        .collect();
    if positives.is_empty() {
        return Err(AttributionError::MissingPositives(target.to_string()));
    }
    if negatives.is_empty() {
        return Err(AttributionError::MissingNegatives(target.to_string()));
    }
    Ok(Split { positives, negatives })
}

fn quality_from(
    split: &Split<'_>,
    pos_conf: &[f64],
    neg_conf: &[f64],
    t: f64,
) -> DetectorQuality {
    let tp = pos_conf.iter().filter(|&&c| c >= t).count();
    let tn = neg_conf.iter().filter(|&&c| c < t).count();
    let tokens: usize = split
        .positives
        .iter()
        .chain(&split.negatives)
        .map(|s| s.len())
        .sum();
    let n = split.positives.len() + split.negatives.len();
    DetectorQuality {
        tpr: tp as f64 / pos_conf.len() as f64,
        tnr: tn as f64 / neg_conf.len() as f64,
        mean_tokens: tokens as f64 / n as f64,
        positives: split.positives.len(),
        negatives: split.negatives.len(),
    }
}

/// TPR over traces sourced from `target`, TNR over traces sourced from any
/// other model. Unlabelled traces are ignored.
pub fn evaluate_detector(
    traces: &[SequenceTrace],
    target: &ModelId,
    params: &AttributionParams,
) -> Result<DetectorQuality, AttributionError> {
    let split = split(traces, target)?;
    let pos: Vec<f64> = split.positives.iter().map(|s| s.confidence(params.p)).collect();
    let neg: Vec<f64> = split.negatives.iter().map(|s| s.confidence(params.p)).collect();
    Ok(quality_from(&split, &pos, &neg, params.t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub params: AttributionParams,
    pub quality: DetectorQuality,
}

pub const DEFAULT_P_GRID: [f64; 8] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0];

/// `t` in steps of 0.05 from 0.05 to 1.
pub fn default_t_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// Evaluates every `(p, t)` combination, `p`-major.
pub fn sweep_detector(
    traces: &[SequenceTrace],
    target: &ModelId,
    p_grid: &[f64],
    t_grid: &[f64],
) -> Result<Vec<SweepRow>, AttributionError> {
    let split = split(traces, target)?;
    let mut rows = Vec::with_capacity(p_grid.len() * t_grid.len());
    for &p in p_grid {
        let pos: Vec<f64> = split.positives.iter().map(|s| s.confidence(p)).collect();
        let neg: Vec<f64> = split.negatives.iter().map(|s| s.confidence(p)).collect();
        for &t in t_grid {
            rows.push(SweepRow {
                params: AttributionParams::new(p, t)?,
                quality: quality_from(&split, &pos, &neg, t),
            });
        }
    }
    Ok(rows)
}

/// The row maximising `tpr + tnr`; the first such row on ties.
pub fn best_row(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter().copied().fold(None, |best, row| match best {
        Some(b) if b.quality.tpr + b.quality.tnr >= row.quality.tpr + row.quality.tnr => Some(b),
        _ => Some(row),
    })
}

/// Table with columns `Model, TPR, TNR, #Tokens` (rates in percent).
pub fn render_quality_table(rows: &[(ModelId, DetectorQuality)]) -> String {
    let width = rows
        .iter()
        .map(|(m, _)| m.as_str().chars().count())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>7}\n", "Model", "TPR", "TNR", "#Tokens");
    for (m, q) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>6.2}  {:>7.2}",
            m.as_str(),
            q.tpr * 100.0,
            q.tnr * 100.0,
            q.mean_tokens
        );
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_source: Option<String>,
    n: usize,
    steps: Vec<(f64, f64)>,
}

/// Reads traces stored one per line as
/// `{"true_source": "m", "n": 2, "steps": [[p, above], ...]}`.
pub fn read_traces<R: Read>(reader: R) -> Result<Vec<SequenceTrace>, AttributionError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let parse_err = |message: String| AttributionError::Parse {
            line: line_no,
            message,
        };
        let text = line.map_err(|e| parse_err(e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let row: TraceRow = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if row.n != row.steps.len() {
            return Err(parse_err(format!(
                "n = {} but {} steps were given",
                row.n,
                row.steps.len()
            )));
        }
        let source = row
            .true_source
            .map(ModelId::new)
            .transpose()
            .map_err(|e| parse_err(e.to_string()))?;
        let trace =
            SequenceTrace::from_pairs(&row.steps, source).map_err(|e| parse_err(e.to_string()))?;
        out.push(trace);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(traces: &[SequenceTrace], mut out: W) -> std::io::Result<()> {
    for trace in traces {
        let row = TraceRow {
            true_source: trace.true_source.as_ref().map(|m| m.to_string()),
            n: trace.len(),
            steps: trace
                .steps
                .iter()
                .map(|s| (s.realized_token_prob, s.cum_prob_above))
                .collect(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
