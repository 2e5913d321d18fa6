//! Bradley-Terry ranking.
//!
//! Under the Bradley-Terry model a battle between models `i` and `j` is won
//! by `i` with probability `1 / (1 + exp(s_j - s_i))`. Scores are fitted by
//! maximising the tie-split log-likelihood, in which every tie counts as
//! half a win for each side:
//!
//! ```text
//! f(s) = (1/N) * sum_{i != j} w_ij * ln sigma(s_i - s_j)  -  lambda * sum_i s_i^2
//! ```
//!
//! where `w_ij` is the number of wins of `i` over `j` plus half the ties
//! between them and `N` the number of battles. The objective is strictly
//! concave for `lambda > 0`, so a damped Newton iteration converges to the
//! unique maximiser; the line search only accepts steps that do not lower
//! `f`, which makes the objective trace monotone.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::prefdata::{logistic, ModelId, PreferenceDataset, VoteLabel};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("dataset has no battles")]
    EmptyDataset,
    #[error("model `{0}` has no battles")]
    ZeroBattles(ModelId),
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error("leaderboards have different rosters: `{0}` is missing from one of them")]
    RosterMismatch(ModelId),
}

/// Pairwise win rates with ties split evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    roster: Vec<ModelId>,
    win_prob: Vec<Vec<f64>>,
    battle_count: Vec<Vec<u64>>,
}

impl WinMatrix {
    pub fn roster(&self) -> &[ModelId] {
        &self.roster
    }

    /// `p(roster[i] > roster[j])`, or `None` when the pair never met.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (self.battle_count[i][j] > 0).then(|| self.win_prob[i][j])
    }

    pub fn battles(&self, i: usize, j: usize) -> u64 {
        self.battle_count[i][j]
    }

    /// Same as [`WinMatrix::get`], addressed by model name.
    pub fn by_name(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.roster.iter().position(|m| m.as_str() == a)?;
        let j = self.roster.iter().position(|m| m.as_str() == b)?;
        self.get(i, j)
    }

    /// Raw matrix; cells without battles hold 0.
    pub fn win_prob(&self) -> &[Vec<f64>] {
        &self.win_prob
    }

    pub fn battle_count(&self) -> &[Vec<u64>] {
        &self.battle_count
    }
}

/// Aggregated tie-split win counts, `wins[i * k + j]`.
#[derive(Debug, Clone)]
struct PairCounts {
    k: usize,
    wins: Vec<f64>,
    battles: Vec<u64>,
    total: f64,
}

impl PairCounts {
    fn new(k: usize) -> Self {
        Self {
            k,
            wins: vec![0.0; k * k],
            battles: vec![0; k * k],
            total: 0.0,
        }
    }

    fn add(&mut self, i: usize, j: usize, label: VoteLabel) {
        let k = self.k;
        match label {
            VoteLabel::LeftWins => self.wins[i * k + j] += 1.0,
            VoteLabel::RightWins => self.wins[j * k + i] += 1.0,
            VoteLabel::Tie => {
                self.wins[i * k + j] += 0.5;
                self.wins[j * k + i] += 0.5;
            }
        }
        self.battles[i * k + j] += 1;
        self.battles[j * k + i] += 1;
        self.total += 1.0;
    }

    fn from_dataset(ds: &PreferenceDataset) -> Self {
        let indexed = index_records(ds);
        let mut counts = Self::new(ds.roster().len());
        for &(i, j, label) in &indexed {
            counts.add(i, j, label);
        }
        counts
    }

    fn appearances(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.battles[i * self.k + j]).sum()
    }

    /// Restriction to the models listed in `keep`.
    fn restrict(&self, keep: &[usize]) -> Self {
        let m = keep.len();
        let mut out = Self::new(m);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                out.wins[a * m + b] = self.wins[i * self.k + j];
                out.battles[a * m + b] = self.battles[i * self.k + j];
            }
        }
        out.total = self.total;
        out
    }
}

fn index_records(ds: &PreferenceDataset) -> Vec<(usize, usize, VoteLabel)> {
    ds.records()
        .iter()
        .map(|r| {
            let i = ds.index_of(&r.left).expect("validated dataset");
            let j = ds.index_of(&r.right).expect("validated dataset");
            (i, j, r.label)
        })
        .collect()
}

/// Estimates `p(m_i > m_j)` for every pair that met at least once.
pub fn win_matrix(ds: &PreferenceDataset) -> WinMatrix {
    let counts = PairCounts::from_dataset(ds);
    let k = counts.k;
    let mut win_prob = vec![vec![0.0; k]; k];
    let mut battle_count = vec![vec![0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let n = counts.battles[i * k + j];
            if i != j && n > 0 {
                win_prob[i][j] = counts.wins[i * k + j] / n as f64;
                battle_count[i][j] = n;
            }
        }
    }
    WinMatrix {
        roster: ds.roster().to_vec(),
        win_prob,
        battle_count,
    }
}

/// Numerical settings of the Bradley-Terry fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// L2 penalty on the per-battle-normalised objective. Must be positive.
    pub regularization: f64,
    /// Stop once one iteration improves the objective by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            regularization: 1e-4,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<(), FitError> {
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(FitError::InvalidOptions(format!(
                "regularization must be positive, got {}",
                self.regularization
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(FitError::InvalidOptions(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(FitError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Identifiability convention applied to fitted scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchoring {
    /// Scores are shifted to have mean zero.
    ZeroMean,
}

/// Fitted Bradley-Terry coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BtScores {
    roster: Vec<ModelId>,
    scores: Vec<f64>,
    anchoring: Anchoring,
    iterations: usize,
    objective: f64,
}

impl BtScores {
    /// Wraps externally supplied scores, re-anchoring them to zero mean.
    pub fn from_scores(roster: Vec<ModelId>, mut scores: Vec<f64>) -> Self {
        assert_eq!(roster.len(), scores.len(), "one score per model");
        anchor(&mut scores);
        Self {
            roster,
            scores,
            anchoring: Anchoring::ZeroMean,
            iterations: 0,
            objective: f64::NAN,
        }
    }

    pub fn roster(&self) -> &[ModelId] {
        &self.roster
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn anchoring(&self) -> Anchoring {
        self.anchoring
    }

    pub fn score(&self, model: &ModelId) -> Option<f64> {
        self.roster
            .iter()
            .position(|m| m == model)
            .map(|i| self.scores[i])
    }

    pub fn score_of(&self, name: &str) -> Option<f64> {
        self.roster
            .iter()
            .position(|m| m.as_str() == name)
            .map(|i| self.scores[i])
    }

    /// Newton iterations taken by the fit.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Penalised, per-battle-normalised log-likelihood at the solution.
    pub fn objective(&self) -> f64 {
        self.objective
    }
}

fn anchor(scores: &mut [f64]) {
    if scores.is_empty() {
        return;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.iter_mut().for_each(|s| *s -= mean);
}

fn ln_logistic(x: f64) -> f64 {
    // ln(1 / (1 + e^-x)) without overflow
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Penalised objective for `counts` at `s`.
fn objective(counts: &PairCounts, s: &[f64], lambda: f64) -> f64 {
    let k = counts.k;
    let mut ll = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = counts.wins[i * k + j];
            if w > 0.0 {
                ll += w * ln_logistic(s[i] - s[j]);
            }
        }
    }
    ll / counts.total - lambda * s.iter().map(|x| x * x).sum::<f64>()
}

fn gradient_and_hessian(counts: &PairCounts, s: &[f64], lambda: f64) -> (DVector<f64>, DMatrix<f64>) {
    let k = counts.k;
    let n = counts.total;
    let mut grad = DVector::from_fn(k, |i, _| -2.0 * lambda * s[i]);
    // negative Hessian, positive definite
    let mut neg_hess = DMatrix::from_diagonal_element(k, k, 2.0 * lambda);
    for i in 0..k {
        for j in (i + 1)..k {
            let w_ij = counts.wins[i * k + j];
            let w_ji = counts.wins[j * k + i];
            let total = w_ij + w_ji;
            if total == 0.0 {
                continue;
            }
            let p = logistic(s[i] - s[j]);
            let g = (w_ij - total * p) / n;
            grad[i] += g;
            grad[j] -= g;
            let h = total * p * (1.0 - p) / n;
            neg_hess[(i, i)] += h;
            neg_hess[(j, j)] += h;
            neg_hess[(i, j)] -= h;
            neg_hess[(j, i)] -= h;
        }
    }
    (grad, neg_hess)
}

struct RawFit {
    scores: Vec<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

fn fit_counts(counts: &PairCounts, opts: &FitOptions) -> Result<RawFit, FitError> {
    let k = counts.k;
    let lambda = opts.regularization;
    let mut s = vec![0.0; k];
    let mut f = objective(counts, &s, lambda);
    let mut trace = vec![f];
    for iteration in 1..=opts.max_iterations {
        let (grad, neg_hess) = gradient_and_hessian(counts, &s, lambda);
        let slope_dir = match neg_hess.cholesky() {
            Some(chol) => chol.solve(&grad),
            None => grad.clone(),
        };
        let slope = grad.dot(&slope_dir);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let candidate: Vec<f64> = s
                .iter()
                .zip(slope_dir.iter())
                .map(|(x, d)| x + step * d)
                .collect();
            let f_new = objective(counts, &candidate, lambda);
            if f_new >= f + 1e-4 * step * slope {
                accepted = Some((candidate, f_new));
                break;
            }
            step *= 0.5;
        }
        // a rejected line search means we are at the optimum up to rounding
        let improvement = match accepted {
            Some((candidate, f_new)) if f_new >= f => {
                let gain = f_new - f;
                s = candidate;
                f = f_new;
                gain
            }
            _ => 0.0,
        };
        trace.push(f);
        if improvement < opts.tolerance {
            anchor(&mut s);
            return Ok(RawFit {
                scores: s,
                iterations: iteration,
                trace,
            });
        }
    }
    let (grad, _) = gradient_and_hessian(counts, &s, lambda);
    Err(FitError::NonConvergence {
        iterations: opts.max_iterations,
        gradient_norm: grad.norm(),
    })
}

fn check_coverage(ds: &PreferenceDataset, counts: &PairCounts) -> Result<(), FitError> {
    if ds.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    for (i, model) in ds.roster().iter().enumerate() {
        if counts.appearances(i) == 0 {
            return Err(FitError::ZeroBattles(model.clone()));
        }
    }
    Ok(())
}

/// Fits Bradley-Terry scores, anchored to zero mean.
pub fn fit_bt(ds: &PreferenceDataset, opts: &FitOptions) -> Result<BtScores, FitError> {
    fit_bt_traced(ds, opts).map(|(scores, _)| scores)
}

/// Like [`fit_bt`], also returning the objective value before the first
/// iteration and after every iteration.
pub fn fit_bt_traced(
    ds: &PreferenceDataset,
    opts: &FitOptions,
) -> Result<(BtScores, Vec<f64>), FitError> {
    opts.validate()?;
    let counts = PairCounts::from_dataset(ds);
    check_coverage(ds, &counts)?;
    let raw = fit_counts(&counts, opts)?;
    let objective = *raw.trace.last().expect("trace starts non-empty");
    Ok((
        BtScores {
            roster: ds.roster().to_vec(),
            scores: raw.scores,
            anchoring: Anchoring::ZeroMean,
            iterations: raw.iterations,
            objective,
        },
        raw.trace,
    ))
}

/// Inclusive bootstrap rank interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankInterval {
    pub low: usize,
    pub high: usize,
}

impl RankInterval {
    pub fn contains(&self, rank: usize) -> bool {
        (self.low..=self.high).contains(&rank)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    /// 1-based.
    pub rank: usize,
    pub model: ModelId,
    pub score: f64,
    pub interval: Option<RankInterval>,
}

/// Models ordered by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn entries(&self) -> &[LeaderboardEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, model: &ModelId) -> Option<usize> {
        self.entries.iter().find(|e| &e.model == model).map(|e| e.rank)
    }

    pub fn rank_of_name(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.model.as_str() == name)
            .map(|e| e.rank)
    }

    pub fn entry(&self, name: &str) -> Option<&LeaderboardEntry> {
        self.entries.iter().find(|e| e.model.as_str() == name)
    }

    /// Aligned plain-text table.
    pub fn render(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.model.as_str().chars().count())
            .max()
            .unwrap_or(0)
            .max("Model".len());
        let with_ci = self.entries.iter().any(|e| e.interval.is_some());
        let mut out = String::new();
        let _ = write!(out, "{:>4}  {:<width$}  {:>10}", "Rank", "Model", "Score");
        if with_ci {
            let _ = write!(out, "  {:>9}", "95% CI");
        }
        out.push('\n');
        for e in &self.entries {
            let _ = write!(out, "{:>4}  {:<width$}  {:>10.4}", e.rank, e.model.as_str(), e.score);
            if with_ci {
                let ci = e
                    .interval
                    .map(|iv| format!("[{}, {}]", iv.low, iv.high))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {ci:>9}");
            }
            out.push('\n');
        }
        out
    }

    /// Delimited export: `rank,model,score,ci_low,ci_high`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,model,score,ci_low,ci_high\n");
        for e in &self.entries {
            let (lo, hi) = e
                .interval
                .map(|iv| (iv.low.to_string(), iv.high.to_string()))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", e.rank, csv_field(e.model.as_str()), e.score, lo, hi);
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ranking_order(roster: &[ModelId], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..roster.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| roster[a].cmp(&roster[b]))
    });
    order
}

/// Sorts models by descending score, breaking exact ties by name.
pub fn leaderboard(scores: &BtScores) -> Leaderboard {
    let entries = ranking_order(&scores.roster, &scores.scores)
        .into_iter()
        .enumerate()
        .map(|(pos, i)| LeaderboardEntry {
            rank: pos + 1,
            model: scores.roster[i].clone(),
            score: scores.scores[i],
            interval: None,
        })
        .collect();
    Leaderboard { entries }
}

/// A leaderboard with bootstrap rank intervals attached.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapLeaderboard {
    pub leaderboard: Leaderboard,
    pub resamples: usize,
    /// Per model, the number of resamples in which it had no battles and
    /// therefore no rank.
    pub skipped: Vec<(ModelId, usize)>,
}

/// Lower and upper percentile picks over sorted ranks, rounding outward.
fn percentile_interval(sorted: &[usize]) -> RankInterval {
    let last = (sorted.len() - 1) as f64;
    let lo = (0.025 * last).floor() as usize;
    let hi = (0.975 * last).ceil() as usize;
    RankInterval {
        low: sorted[lo],
        high: sorted[hi],
    }
}

/// Record-level bootstrap of leaderboard ranks.
///
/// Each resample draws `|records|` records with replacement using a seed
/// derived from `(seed, resample index)`, refits on the models that still
/// have battles, and records their ranks among those models. The interval
/// is the 2.5th to 97.5th percentile of the collected ranks.
pub fn bootstrap_ranks(
    ds: &PreferenceDataset,
    resamples: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapLeaderboard, FitError> {
    if resamples == 0 {
        return Err(FitError::InvalidOptions("resamples must be at least 1".into()));
    }
    let point = fit_bt(ds, opts)?;
    let indexed = index_records(ds);
    let k = ds.roster().len();
    let per_resample: Vec<Vec<Option<usize>>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive(seed, b as u64));
            let mut counts = PairCounts::new(k);
            for _ in 0..indexed.len() {
                let (i, j, label) = indexed[rng.gen_range(0..indexed.len())];
                counts.add(i, j, label);
            }
            let keep: Vec<usize> = (0..k).filter(|&i| counts.appearances(i) > 0).collect();
            let reduced = counts.restrict(&keep);
            let raw = fit_counts(&reduced, opts)?;
            let roster: Vec<ModelId> = keep.iter().map(|&i| ds.roster()[i].clone()).collect();
            let mut ranks = vec![None; k];
            for (pos, local) in ranking_order(&roster, &raw.scores).into_iter().enumerate() {
                ranks[keep[local]] = Some(pos + 1);
            }
            Ok(ranks)
        })
        .collect::<Result<_, FitError>>()?;

    let mut board = leaderboard(&point);
    let mut skipped = Vec::new();
    for entry in &mut board.entries {
        let i = ds.index_of(&entry.model).expect("same roster");
        let mut ranks: Vec<usize> = per_resample.iter().filter_map(|r| r[i]).collect();
        let missing = resamples - ranks.len();
        if missing > 0 {
            skipped.push((entry.model.clone(), missing));
        }
        if !ranks.is_empty() {
            ranks.sort_unstable();
            entry.interval = Some(percentile_interval(&ranks));
        }
    }
    skipped.sort();
    Ok(BootstrapLeaderboard {
        leaderboard: board,
        resamples,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplacementEntry {
    pub model: ModelId,
    pub base_rank: usize,
    pub new_rank: usize,
    /// `base_rank - new_rank`; positive means the model moved up.
    pub delta: i64,
}

/// Per-model rank change between two leaderboards over the same roster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankDisplacement {
    entries: Vec<DisplacementEntry>,
}

impl RankDisplacement {
    /// Entries in base-leaderboard order.
    pub fn entries(&self) -> &[DisplacementEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&DisplacementEntry> {
        self.entries.iter().find(|e| e.model.as_str() == name)
    }

    pub fn render(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.model.as_str().chars().count())
            .max()
            .unwrap_or(0)
            .max("Model".len());
        let mut out = format!("{:<width$}  {:>5}  {:>8}\n", "Model", "Orig.", "New");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>8}",
                e.model.as_str(),
                e.base_rank,
                annotate_rank(e.new_rank, e.delta)
            );
        }
        out
    }
}

/// Renders a rank with its movement, e.g. `28↑11`, `41↓5` or `21`.
pub fn annotate_rank(rank: usize, delta: i64) -> String {
    match delta {
        0 => rank.to_string(),
        d if d > 0 => format!("{rank}↑{d}"),
        d => format!("{rank}↓{}", -d),
    }
}

/// Signed rank change of every model from `base` to `other`.
pub fn rank_displacement(
    base: &Leaderboard,
    other: &Leaderboard,
) -> Result<RankDisplacement, FitError> {
    if let Some(e) = other.entries.iter().find(|e| base.rank_of(&e.model).is_none()) {
        return Err(FitError::RosterMismatch(e.model.clone()));
    }
    let entries = base
        .entries
        .iter()
        .map(|e| {
            let new_rank = other
                .rank_of(&e.model)
                .ok_or_else(|| FitError::RosterMismatch(e.model.clone()))?;
            Ok(DisplacementEntry {
                model: e.model.clone(),
                base_rank: e.rank,
                new_rank,
                delta: e.rank as i64 - new_rank as i64,
            })
        })
        .collect::<Result<_, FitError>>()?;
    Ok(RankDisplacement { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefdata::PreferenceRecord;

    fn id(s: &str) -> ModelId {
        ModelId::new(s).unwrap()
    }

    fn battles(spec: &[(&str, &str, VoteLabel, usize)]) -> PreferenceDataset {
        let mut recs = Vec::new();
        for &(a, b, label, n) in spec {
            for _ in 0..n {
                recs.push(PreferenceRecord::new(id(a), id(b), label));
            }
        }
        PreferenceDataset::from_records(recs).unwrap()
    }

    fn board(pairs: &[(&str, f64)]) -> Leaderboard {
        let roster = pairs.iter().map(|(n, _)| id(n)).collect();
        let scores = pairs.iter().map(|(_, s)| *s).collect();
        leaderboard(&BtScores::from_scores(roster, scores))
    }

    #[test]
    fn win_matrix_splits_ties() {
        let ds = battles(&[
            ("A", "B", VoteLabel::LeftWins, 7),
            ("A", "B", VoteLabel::RightWins, 1),
            ("B", "A", VoteLabel::Tie, 2),
            ("C", "D", VoteLabel::Tie, 0),
        ]);
        let wm = win_matrix(&ds);
        assert_eq!(wm.by_name("A", "B"), Some(0.8));
        assert!((wm.by_name("B", "A").unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(wm.battles(0, 1), 10);
    }

    #[test]
    fn win_matrix_absent_cells() {
        let recs = vec![PreferenceRecord::new(id("A"), id("B"), VoteLabel::Tie)];
        let ds = PreferenceDataset::new([id("A"), id("B"), id("C"), id("D")], recs).unwrap();
        let wm = win_matrix(&ds);
        assert_eq!(wm.by_name("C", "D"), None);
        assert_eq!(wm.battles(2, 3), 0);
        assert_eq!(wm.by_name("A", "B"), Some(0.5));
    }

    #[test]
    fn two_model_closed_form() {
        let ds = battles(&[
            ("A", "B", VoteLabel::LeftWins, 75),
            ("A", "B", VoteLabel::RightWins, 25),
        ]);
        let opts = FitOptions {
            regularization: 1e-12,
            ..FitOptions::default()
        };
        let fit = fit_bt(&ds, &opts).unwrap();
        let gap = fit.score_of("A").unwrap() - fit.score_of("B").unwrap();
        assert!((gap - 3f64.ln()).abs() < 1e-3, "{gap}");
    }

    #[test]
    fn even_split_is_zero() {
        let ds = battles(&[
            ("A", "B", VoteLabel::LeftWins, 5),
            ("A", "B", VoteLabel::RightWins, 5),
        ]);
        let fit = fit_bt(&ds, &FitOptions::default()).unwrap();
        assert!(fit.scores().iter().all(|s| s.abs() < 1e-9));
        let lb = leaderboard(&fit);
        assert_eq!(lb.rank_of_name("A"), Some(1));
        assert_eq!(lb.rank_of_name("B"), Some(2));
    }

    #[test]
    fn undefeated_model_stays_finite() {
        let ds = battles(&[("A", "B", VoteLabel::LeftWins, 50)]);
        let fit = fit_bt(&ds, &FitOptions::default()).unwrap();
        assert!(fit.scores().iter().all(|s| s.is_finite()));
        assert!(fit.score_of("A").unwrap() > fit.score_of("B").unwrap());
    }

    #[test]
    fn fit_errors() {
        let recs = vec![PreferenceRecord::new(id("A"), id("B"), VoteLabel::Tie)];
        let ds = PreferenceDataset::new([id("A"), id("B"), id("C")], recs).unwrap();
        assert_eq!(
            fit_bt(&ds, &FitOptions::default()).unwrap_err(),
            FitError::ZeroBattles(id("C"))
        );
        let empty = PreferenceDataset::new([id("A"), id("B")], vec![]).unwrap();
        assert_eq!(
            fit_bt(&empty, &FitOptions::default()).unwrap_err(),
            FitError::EmptyDataset
        );
        let ds = battles(&[
            ("A", "B", VoteLabel::LeftWins, 9),
            ("A", "B", VoteLabel::RightWins, 1),
        ]);
        let opts = FitOptions {
            max_iterations: 1,
            tolerance: 0.0,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_bt(&ds, &opts),
            Err(FitError::NonConvergence { iterations: 1, .. })
        ));
        let bad = FitOptions {
            regularization: 0.0,
            ..FitOptions::default()
        };
        assert!(matches!(fit_bt(&ds, &bad), Err(FitError::InvalidOptions(_))));
    }

    #[test]
    fn leaderboard_order_and_tie_break() {
        let lb = board(&[("C", -1.0), ("A", 1.0), ("B", 0.0)]);
        let names: Vec<_> = lb.entries().iter().map(|e| e.model.as_str()).collect();
        assert_eq!(names, vec!["A", "B", "C"]);
        let lb = board(&[("B", 0.0), ("A", 0.0)]);
        assert_eq!(lb.rank_of_name("A"), Some(1));
        assert_eq!(lb.rank_of_name("B"), Some(2));
    }

    #[test]
    fn displacement_basics() {
        let base = board(&[("A", 2.0), ("B", 1.0), ("C", 0.0)]);
        let same = rank_displacement(&base, &base).unwrap();
        assert!(same.entries().iter().all(|e| e.delta == 0));
        let swapped = board(&[("A", 2.0), ("B", 0.0), ("C", 1.0)]);
        let d = rank_displacement(&base, &swapped).unwrap();
        assert_eq!(d.get("B").unwrap().delta, -1);
        assert_eq!(d.get("C").unwrap().delta, 1);
        assert_eq!(d.entries().iter().map(|e| e.delta).sum::<i64>(), 0);
        let other = board(&[("A", 2.0), ("B", 1.0), ("Z", 0.0)]);
        assert!(matches!(
            rank_displacement(&base, &other),
            Err(FitError::RosterMismatch(_))
        ));
    }

    #[test]
    fn rank_annotation() {
        assert_eq!(annotate_rank(28, 11), "28↑11");
        assert_eq!(annotate_rank(41, -5), "41↓5");
        assert_eq!(annotate_rank(21, 0), "21");
    }

    #[test]
    fn bootstrap_degenerate_dominance() {
        let ds = battles(&[("A", "B", VoteLabel::LeftWins, 50)]);
        let boot = bootstrap_ranks(&ds, 100, 1, &FitOptions::default()).unwrap();
        let a = boot.leaderboard.entry("A").unwrap();
        assert_eq!(a.interval, Some(RankInterval { low: 1, high: 1 }));
        assert!(boot.skipped.is_empty());
    }

    #[test]
    fn bootstrap_reports_skipped_models() {
        // C appears once, so some resamples drop it
        let mut ds = battles(&[
            ("A", "B", VoteLabel::LeftWins, 30),
            ("A", "B", VoteLabel::RightWins, 10),
            ("A", "C", VoteLabel::RightWins, 1),
        ]);
        ds = PreferenceDataset::from_records(ds.into_records()).unwrap();
        let boot = bootstrap_ranks(&ds, 200, 3, &FitOptions::default()).unwrap();
        let skipped_c = boot
            .skipped
            .iter()
            .find(|(m, _)| m.as_str() == "C")
            .map(|(_, n)| *n)
            .unwrap();
        // P(C missing) = (40/41)^41 ~ 0.36
        assert!(skipped_c > 30 && skipped_c < 120, "{skipped_c}");
    }

    #[test]
    fn percentile_picks() {
        assert_eq!(percentile_interval(&[3]), RankInterval { low: 3, high: 3 });
        let ranks: Vec<usize> = (1..=100).collect();
        assert_eq!(percentile_interval(&ranks), RankInterval { low: 3, high: 98 });
    }

    #[test]
    fn render_tables() {
        let lb = board(&[("alpha", 1.0), ("b", -1.0)]);
        let text = lb.render();
        assert!(text.starts_with("Rank  Model"));
        assert!(text.contains("   1  alpha      1.0000"));
        assert!(lb.to_csv().starts_with("rank,model,score,ci_low,ci_high\n1,alpha,1,,\n"));
    }
}
