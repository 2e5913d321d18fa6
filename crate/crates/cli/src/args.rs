use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "arena-fragility", version, about = "Measure how fragile pairwise-preference leaderboards are to poor-quality votes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Master seed for every stochastic step (default 0; `simulate` falls back to the config's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for report files and the run manifest. Without it, the report goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "snake_case")]
pub enum Command {
    /// Fit a Bradley-Terry leaderboard, optionally with bootstrap rank intervals.
    Rank(RankArgs),
    /// Corrupt a fraction of votes and measure rank displacement over many trials.
    Corrupt(CorruptArgs),
    /// Score attribution traces and optionally measure detector quality.
    Attribute(AttributeArgs),
    /// Run the mock arena with an optional attacker.
    Simulate(SimulateArgs),
    /// Fleiss' kappa per dimension from long-format ratings.
    Kappa(KappaArgs),
    /// Generate synthetic battles from known model scores.
    Gen(GenArgs),
    /// Sample outputs from an arena config and trace them under a target model.
    Traces(TracesArgs),
    /// Re-run a manifest and check that every report is byte-identical.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Ridge penalty on the per-battle log-likelihood.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// canonical_jsonl or lmsys55k_csv (inferred from the extension by default).
    #[arg(long)]
    pub format: Option<String>,
    /// Bootstrap resamples for rank intervals (0 disables).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    /// apathetic, adversarial_flip (alias adversarial) or adversarial_inject.
    #[arg(long)]
    pub mode: String,
    /// Corruption rate in percent; repeat or comma-separate for one column per rate.
    #[arg(long, required = true, value_delimiter = ',')]
    pub rate: Vec<f64>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Probability the attacker recognises a target output.
    #[arg(long, default_value_t = 1.0)]
    pub tpr: f64,
    /// Probability the attacker correctly rejects a non-target output.
    #[arg(long, default_value_t = 1.0)]
    pub tnr: f64,
    /// Models the attacker votes against when it sees them opposite a non-target output.
    #[arg(long, value_delimiter = ',')]
    pub competitors: Vec<String>,
    /// Restrict the table rows to these models.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long, default_value_t = 0.8)]
    pub t: f64,
    /// Model whose traces count as positives when measuring TPR/TNR.
    #[arg(long)]
    pub target: Option<String>,
    /// Grid-search (p, t) and report the best pair; needs --target.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub battles: usize,
    /// Ignore the configured attacker (for paired baseline runs).
    #[arg(long)]
    pub no_attacker: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KappaArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Print raw kappa instead of kappa x 100.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    /// Key-value file with `models.<id>.score` and optional `tie_probability`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TracesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 100)]
    pub per_model: usize,
    #[arg(long, default_value_t = 200)]
    pub length: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
