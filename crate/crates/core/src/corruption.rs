//! Vote corruption and displacement experiments.
//!
//! Two families of poor-quality votes are simulated on an existing dataset:
//!
//! - apathetic: a random `r%` of the records get a uniformly random label,
//! - adversarial: an attacker who can recognise a target model's outputs
//!   (up to a detector's TPR/TNR) votes for it, either by relabelling a
//!   random `r%` of existing battles (`adversarial_flip`) or by contributing
//!   `r%` additional battles (`adversarial_inject`).
//!
//! [`displacement_experiment`] repeats a corruption over many seeds and
//! summarises how far each model moves on the refitted leaderboard.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::btrank::{csv_field, fit_bt, leaderboard, rank_displacement, FitError, FitOptions, Leaderboard};
use crate::prefdata::{ModelId, PreferenceDataset, PreferenceRecord, Provenance, VoteLabel};
use crate::seed::{self, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorruptionError {
    #[error("rate must lie in [0, 100], got {0}")]
    InvalidRate(f64),
    #[error("{0} mode requires a target model")]
    MissingTarget(CorruptionMode),
    #[error("target `{0}` is not in the roster")]
    UnknownTarget(String),
    #[error("competitor `{0}` is not in the roster")]
    UnknownCompetitor(String),
    #[error("detector rates must lie in [0, 1], got tpr={tpr}, tnr={tnr}")]
    InvalidDetector { tpr: f64, tnr: f64 },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("expected an adversarial mode, got {0}")]
    NotAdversarial(CorruptionMode),
    #[error("baseline fit failed: {0}")]
    Baseline(FitError),
    #[error("all {trials} trials failed; first error: {first}")]
    AllTrialsFailed { trials: usize, first: FitError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    Apathetic,
    AdversarialFlip,
    AdversarialInject,
}

impl CorruptionMode {
    pub fn is_adversarial(self) -> bool {
        !matches!(self, CorruptionMode::Apathetic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionMode::Apathetic => "apathetic",
            CorruptionMode::AdversarialFlip => "adversarial_flip",
            CorruptionMode::AdversarialInject => "adversarial_inject",
        }
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "apathetic" => Ok(CorruptionMode::Apathetic),
            "adversarial_flip" | "adversarial" => Ok(CorruptionMode::AdversarialFlip),
            "adversarial_inject" => Ok(CorruptionMode::AdversarialInject),
            other => Err(format!(
                "unknown mode `{other}` (expected apathetic, adversarial_flip or adversarial_inject)"
            )),
        }
    }
}

/// How reliably the attacker recognises target outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorRates {
    pub tpr: f64,
    pub tnr: f64,
}

impl Default for DetectorRates {
    fn default() -> Self {
        Self { tpr: 1.0, tnr: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    pub rate_percent: f64,
    pub target: Option<ModelId>,
    pub detector: DetectorRates,
    /// Models the attacker also votes against whenever one of them shows up
    /// opposite an unrecognised output.
    pub competitors: Vec<ModelId>,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn apathetic(rate_percent: f64, seed: u64) -> Self {
        Self {
            mode: CorruptionMode::Apathetic,
            rate_percent,
            target: None,
            detector: DetectorRates::default(),
            competitors: Vec::new(),
            seed,
        }
    }

    pub fn adversarial(mode: CorruptionMode, rate_percent: f64, target: ModelId, seed: u64) -> Self {
        Self {
            mode,
            rate_percent,
            target: Some(target),
            detector: DetectorRates::default(),
            competitors: Vec::new(),
            seed,
        }
    }

    pub fn with_detector(mut self, tpr: f64, tnr: f64) -> Self {
        self.detector = DetectorRates { tpr, tnr };
        self
    }

    pub fn with_competitors(mut self, competitors: Vec<ModelId>) -> Self {
        self.competitors = competitors;
        self
    }

    /// Checks the spec against a dataset's roster.
    pub fn validate(&self, ds: &PreferenceDataset) -> Result<(), CorruptionError> {
        check_rate(self.rate_percent)?;
        let DetectorRates { tpr, tnr } = self.detector;
        if !((0.0..=1.0).contains(&tpr) && (0.0..=1.0).contains(&tnr)) {
            return Err(CorruptionError::InvalidDetector { tpr, tnr });
        }
        if self.mode.is_adversarial() {
            let target = self
                .target
                .as_ref()
                .ok_or(CorruptionError::MissingTarget(self.mode))?;
            if ds.index_of(target).is_none() {
                return Err(CorruptionError::UnknownTarget(target.to_string()));
            }
        }
        if let Some(c) = self.competitors.iter().find(|c| ds.index_of(c).is_none()) {
            return Err(CorruptionError::UnknownCompetitor(c.to_string()));
        }
        Ok(())
    }
}

fn check_rate(r: f64) -> Result<(), CorruptionError> {
    if (0.0..=100.0).contains(&r) {
        Ok(())
    } else {
        Err(CorruptionError::InvalidRate(r))
    }
}

/// `floor(r * len / 100)`.
pub fn corrupted_count(rate_percent: f64, len: usize) -> usize {
    ((rate_percent * len as f64) / 100.0).floor() as usize
}

/// Replaces the labels of a random `r%` of records with uniform draws over
/// all three labels (possibly the original one).
pub fn corrupt_apathetic(
    ds: &PreferenceDataset,
    rate_percent: f64,
    seed: u64,
) -> Result<PreferenceDataset, CorruptionError> {
    check_rate(rate_percent)?;
    let count = corrupted_count(rate_percent, ds.len());
    if count == 0 {
        return Ok(ds.clone());
    }
    let mut rng = seed::rng(seed);
    let mut records = ds.records().to_vec();
    for i in index::sample(&mut rng, records.len(), count) {
        let rec = &mut records[i];
        rec.label = VoteLabel::ALL[rng.gen_range(0..3)];
        rec.provenance = Provenance::Apathetic;
    }
    Ok(ds.with_records(records))
}

struct Attacker<'a> {
    target: &'a ModelId,
    detector: DetectorRates,
    competitors: &'a [ModelId],
}

impl Attacker<'_> {
    fn flags(&self, model: &ModelId, rng: &mut Rng) -> bool {
        if model == self.target {
            rng.gen_bool(self.detector.tpr)
        } else {
            rng.gen_bool(1.0 - self.detector.tnr)
        }
    }

    /// Runs the detector on both sides; votes for the side recognised as the
    /// target when exactly one side is, otherwise against a lone competitor.
    fn vote(&self, left: &ModelId, right: &ModelId, rng: &mut Rng) -> Option<VoteLabel> {
        let l = self.flags(left, rng);
        let r = self.flags(right, rng);
        match (l, r) {
            (true, false) => Some(VoteLabel::LeftWins),
            (false, true) => Some(VoteLabel::RightWins),
            _ => {
                let lc = self.competitors.contains(left);
                let rc = self.competitors.contains(right);
                match (lc, rc) {
                    (true, false) => Some(VoteLabel::RightWins),
                    (false, true) => Some(VoteLabel::LeftWins),
                    _ => None,
                }
            }
        }
    }
}

/// Applies an adversarial corruption (`spec.mode` must be adversarial).
///
/// In flip mode, a random `r%` subset of battles is shown to the attacker,
/// who relabels every battle where exactly one side is recognised as the
/// target; the rest keep their original vote. In inject mode, `r%` new
/// battles between the target and a uniformly drawn opponent are appended;
/// when the detector cannot single out a side the injected vote is a tie.
pub fn corrupt_adversarial(
    ds: &PreferenceDataset,
    spec: &CorruptionSpec,
) -> Result<PreferenceDataset, CorruptionError> {
    if !spec.mode.is_adversarial() {
        return Err(CorruptionError::NotAdversarial(spec.mode));
    }
    spec.validate(ds)?;
    let count = corrupted_count(spec.rate_percent, ds.len());
    if count == 0 {
        return Ok(ds.clone());
    }
    let target = spec.target.as_ref().expect("validated");
    let attacker = Attacker {
        target,
        detector: spec.detector,
        competitors: &spec.competitors,
    };
    let mut rng = seed::rng(spec.seed);
    let mut records = ds.records().to_vec();
    match spec.mode {
        CorruptionMode::AdversarialFlip => {
            for i in index::sample(&mut rng, records.len(), count) {
                let rec = &mut records[i];
                if let Some(label) = attacker.vote(&rec.left, &rec.right, &mut rng) {
                    rec.label = label;
                    rec.provenance = Provenance::Adversarial;
                }
            }
        }
        CorruptionMode::AdversarialInject => {
            let opponents: Vec<&ModelId> = ds.roster().iter().filter(|m| *m != target).collect();
            records.reserve(count);
            for _ in 0..count {
                let opponent = opponents[rng.gen_range(0..opponents.len())];
                let (left, right) = if rng.gen_bool(0.5) {
                    (target, opponent)
                } else {
                    (opponent, target)
                };
                let label = attacker
                    .vote(left, right, &mut rng)
                    .unwrap_or(VoteLabel::Tie);
                let mut rec = PreferenceRecord::new(left.clone(), right.clone(), label);
                rec.provenance = Provenance::Adversarial;
                records.push(rec);
            }
        }
        CorruptionMode::Apathetic => unreachable!("checked above"),
    }
    Ok(ds.with_records(records))
}

/// Applies whichever corruption `spec` describes.
pub fn corrupt(ds: &PreferenceDataset, spec: &CorruptionSpec) -> Result<PreferenceDataset, CorruptionError> {
    spec.validate(ds)?;
    match spec.mode {
        CorruptionMode::Apathetic => corrupt_apathetic(ds, spec.rate_percent, spec.seed),
        _ => corrupt_adversarial(ds, spec),
    }
}

/// Statistics of one model's displacement across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDisplacement {
    pub model: ModelId,
    pub base_rank: usize,
    pub median_new_rank: f64,
    pub median_delta: f64,
    pub median_abs_delta: f64,
    pub min_delta: i64,
    pub max_delta: i64,
    /// Fraction of trials with `|delta| >= 5`.
    pub moved_five: f64,
}

/// Outcome of a single trial: new ranks per model in base order, or the
/// fit error that aborted it.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Completed(Vec<usize>),
    Failed(FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSummary {
    pub mode: CorruptionMode,
    pub rate_percent: f64,
    /// Number of completed corrupted refits the statistics are computed over.
    pub trials: usize,
    pub models: Vec<ModelDisplacement>,
    pub outcomes: Vec<TrialOutcome>,
}

impl DisplacementSummary {
    pub fn model(&self, name: &str) -> Option<&ModelDisplacement> {
        self.models.iter().find(|m| m.model.as_str() == name)
    }

    pub fn failures(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TrialOutcome::Failed(_)))
            .count()
    }

    /// One row per (trial, model): `mode,rate,trial,model,base_rank,new_rank,delta`.
    pub fn trials_csv(&self, with_header: bool) -> String {
        let mut out = String::new();
        if with_header {
            out.push_str("mode,rate,trial,model,base_rank,new_rank,delta\n");
        }
        for (t, outcome) in self.outcomes.iter().enumerate() {
            if let TrialOutcome::Completed(ranks) = outcome {
                for (m, &new_rank) in self.models.iter().zip(ranks) {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        self.mode,
                        self.rate_percent,
                        t,
                        csv_field(m.model.as_str()),
                        m.base_rank,
                        new_rank,
                        m.base_rank as i64 - new_rank as i64
                    );
                }
            }
        }
        out
    }

    /// Per-model statistics as delimited text.
    pub fn summary_csv(&self, with_header: bool) -> String {
        let mut out = String::new();
        if with_header {
            out.push_str("mode,rate,model,base_rank,median_new_rank,median_delta,min_delta,max_delta,frac_moved_5,trials\n");
        }
        for m in &self.models {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.mode,
                self.rate_percent,
                csv_field(m.model.as_str()),
                m.base_rank,
                m.median_new_rank,
                m.median_delta,
                m.min_delta,
                m.max_delta,
                m.moved_five,
                self.trials
            );
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Corrupts and refits `trials` times and aggregates rank displacement
/// against the uncorrupted leaderboard. Trial `i` uses the seed derived
/// from `(spec.seed, i)`.
pub fn displacement_experiment(
    ds: &PreferenceDataset,
    spec: &CorruptionSpec,
    trials: usize,
    opts: &FitOptions,
) -> Result<DisplacementSummary, CorruptionError> {
    if trials == 0 {
        return Err(CorruptionError::NoTrials);
    }
    spec.validate(ds)?;
    let base = leaderboard(&fit_bt(ds, opts).map_err(CorruptionError::Baseline)?);
    displacement_against(ds, &base, spec, trials, opts)
}

/// Same as [`displacement_experiment`] with a precomputed baseline.
pub fn displacement_against(
    ds: &PreferenceDataset,
    base: &Leaderboard,
    spec: &CorruptionSpec,
    trials: usize,
    opts: &FitOptions,
) -> Result<DisplacementSummary, CorruptionError> {
    if trials == 0 {
        return Err(CorruptionError::NoTrials);
    }
    spec.validate(ds)?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_spec = CorruptionSpec {
                seed: seed::derive(spec.seed, t as u64),
                ..spec.clone()
            };
            let corrupted = corrupt(ds, &trial_spec)?;
            let outcome = match fit_bt(&corrupted, opts)
                .map(|s| leaderboard(&s))
                .and_then(|lb| rank_displacement(base, &lb))
            {
                Ok(d) => TrialOutcome::Completed(d.entries().iter().map(|e| e.new_rank).collect()),
                Err(e) => TrialOutcome::Failed(e),
            };
            Ok(outcome)
        })
        .collect::<Result<_, CorruptionError>>()?;

    let completed: Vec<&Vec<usize>> = outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Completed(r) => Some(r),
            TrialOutcome::Failed(_) => None,
        })
        .collect();
    if completed.is_empty() {
        let first = outcomes
            .iter()
            .find_map(|o| match o {
                TrialOutcome::Failed(e) => Some(e.clone()),
                TrialOutcome::Completed(_) => None,
            })
            .expect("no completed trials implies a failure");
        return Err(CorruptionError::AllTrialsFailed { trials, first });
    }

    let models = base
        .entries()
        .iter()
        .enumerate()
        .map(|(m, entry)| {
            let deltas: Vec<i64> = completed
                .iter()
                .map(|ranks| entry.rank as i64 - ranks[m] as i64)
                .collect();
            let mut new_ranks: Vec<f64> = completed.iter().map(|r| r[m] as f64).collect();
            let mut as_f: Vec<f64> = deltas.iter().map(|&d| d as f64).collect();
            let mut abs: Vec<f64> = deltas.iter().map(|&d| d.abs() as f64).collect();
            ModelDisplacement {
                model: entry.model.clone(),
                base_rank: entry.rank,
                median_new_rank: median(&mut new_ranks),
                median_delta: median(&mut as_f),
                median_abs_delta: median(&mut abs),
                min_delta: *deltas.iter().min().expect("non-empty"),
                max_delta: *deltas.iter().max().expect("non-empty"),
                moved_five: deltas.iter().filter(|d| d.abs() >= 5).count() as f64
                    / deltas.len() as f64,
            }
        })
        .collect();

    Ok(DisplacementSummary {
        mode: spec.mode,
        rate_percent: spec.rate_percent,
        trials: completed.len(),
        models,
        outcomes,
    })
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x:.1}")
    }
}

fn annotate_median(rank: f64, delta: f64) -> String {
    if delta > 0.0 {
        format!("{}↑{}", fmt_num(rank), fmt_num(delta))
    } else if delta < 0.0 {
        format!("{}↓{}", fmt_num(rank), fmt_num(-delta))
    } else {
        fmt_num(rank)
    }
}

/// Renders summaries for several rates side by side: one row per model,
/// an `Orig.` column, then one column per summary holding the median new
/// rank annotated with the median movement. `models` restricts the rows.
pub fn render_rate_table(
    base: &Leaderboard,
    summaries: &[DisplacementSummary],
    models: Option<&[ModelId]>,
) -> String {
    let rows: Vec<&ModelId> = match models {
        Some(list) => list.iter().collect(),
        None => base.entries().iter().map(|e| &e.model).collect(),
    };
    let width = rows
        .iter()
        .map(|m| m.as_str().chars().count())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let headers: Vec<String> = summaries.iter().map(|s| format!("r={}", s.rate_percent)).collect();
    let mut cells: Vec<Vec<String>> = Vec::new();
    for model in &rows {
        let mut row = vec![base
            .rank_of(model)
            .map(|r| r.to_string())
            .unwrap_or_else(|| "-".into())];
        for s in summaries {
            row.push(
                s.model(model.as_str())
                    .map(|d| annotate_median(d.median_new_rank, d.median_delta))
                    .unwrap_or_else(|| "-".into()),
            );
        }
        cells.push(row);
    }
    let col_width = |c: usize| {
        let head = if c == 0 { "Orig.".len() } else { headers[c - 1].chars().count() };
        cells
            .iter()
            .map(|r| r[c].chars().count())
            .max()
            .unwrap_or(0)
            .max(head)
    };
    let widths: Vec<usize> = (0..=summaries.len()).map(col_width).collect();
    let mut out = format!("{:<width$}", "Model");
    let _ = write!(out, "  {:>w$}", "Orig.", w = widths[0]);
    for (h, w) in headers.iter().zip(&widths[1..]) {
        let _ = write!(out, "  {:>w$}", h, w = *w);
    }
    out.push('\n');
    for (model, row) in rows.iter().zip(&cells) {
        let _ = write!(out, "{:<width$}", model.as_str());
        for (cell, w) in row.iter().zip(&widths) {
            // right-align by character count, arrows are multi-byte
            let pad = w.saturating_sub(cell.chars().count());
            let _ = write!(out, "  {}{}", " ".repeat(pad), cell);
        }
        out.push('\n');
    }
    out
}
