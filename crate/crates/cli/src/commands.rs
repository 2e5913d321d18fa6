//! Subcommand bodies. Each one reads and validates its inputs, computes the
//! full report in memory and returns it; nothing touches the output
//! directory until the caller has a complete report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arena_fragility::agreement::kappa_table_from_csv;
use arena_fragility::arenasim::{detector_traces, run_arena, ArenaConfig};
use arena_fragility::attribution::{
    best_row, default_t_grid, evaluate_detector, read_traces, render_quality_table, sweep_detector,
    write_traces, AttributionError, AttributionParams, DEFAULT_P_GRID,
};
use arena_fragility::btrank::BootstrapLeaderboard;
use arena_fragility::config::KeyValues;
use arena_fragility::corruption::{displacement_against, render_rate_table};
use arena_fragility::prefdata::{parse_jsonl, parse_lmsys_csv};
use arena_fragility::seed::{derive, stream};
use arena_fragility::{
    bootstrap_ranks, fit_bt, generate_synthetic, leaderboard, CorruptionMode, CorruptionSpec,
    DatasetFormat, FitOptions, GroundTruthModelSpec, ModelId, PreferenceDataset,
};

use crate::args::*;
use crate::error::CliError;
use crate::manifest::sha256_hex;

#[derive(Debug, Default)]
pub struct Report {
    pub stdout: String,
    /// Report files in write order.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Report {
    fn file(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }
}

#[derive(Debug)]
pub struct Run {
    pub seed: u64,
    pub inputs: BTreeMap<PathBuf, String>,
    pub report: Report,
}

/// Reads input files and remembers their digests.
#[derive(Default)]
struct Inputs(BTreeMap<PathBuf, String>);

impl Inputs {
    fn bytes(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::invalid(e).at(path))?;
        self.0.insert(path.to_path_buf(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn text(&mut self, path: &Path) -> Result<String, CliError> {
        String::from_utf8(self.bytes(path)?).map_err(|e| CliError::invalid(e).at(path))
    }

    fn dataset(&mut self, path: &Path, format: Option<&str>) -> Result<PreferenceDataset, CliError> {
        let format = match format {
            Some(f) => f.parse::<DatasetFormat>().map_err(CliError::invalid)?,
            None => DatasetFormat::infer(path),
        };
        let bytes = self.bytes(path)?;
        let parsed = match format {
            DatasetFormat::CanonicalJsonl => parse_jsonl(&bytes[..]),
            DatasetFormat::Lmsys55kCsv => parse_lmsys_csv(&bytes[..]),
        };
        parsed.map_err(|e| CliError::from(e).at(path))
    }

    fn arena_config(&mut self, path: &Path) -> Result<ArenaConfig, CliError> {
        let kv = KeyValues::parse(&self.text(path)?).map_err(|e| CliError::from(e).at(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let corpora: Vec<PathBuf> = kv
            .keys()
            .filter(|k| k.starts_with("models.") && k.ends_with(".corpus"))
            .filter_map(|k| kv.get(k))
            .map(|p| base.join(p))
            .collect();
        for corpus in &corpora {
            self.bytes(corpus)?;
        }
        ArenaConfig::from_key_values(&kv, base).map_err(|e| CliError::from(e).at(path))
    }
}

fn fit_options(a: &FitArgs) -> FitOptions {
    FitOptions {
        regularization: a.lambda,
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
    }
}

fn model_id(name: &str) -> Result<ModelId, CliError> {
    ModelId::new(name).map_err(CliError::from)
}

/// Runs a non-replay command. `to_dir` says whether reports will be written
/// to files, in which case stdout carries only a summary for bulky outputs.
pub fn run(command: &Command, seed: Option<u64>, to_dir: bool) -> Result<Run, CliError> {
    let mut inputs = Inputs::default();
    let master = seed.unwrap_or(0);
    let (seed, report) = match command {
        Command::Rank(a) => (master, rank(a, master, &mut inputs)?),
        Command::Corrupt(a) => (master, corrupt(a, master, &mut inputs)?),
        Command::Attribute(a) => (master, attribute(a, &mut inputs)?),
        Command::Simulate(a) => {
            let config = inputs.arena_config(&a.config)?;
            let seed = seed.unwrap_or(config.seed);
            (seed, simulate(a, config, seed)?)
        }
        Command::Kappa(a) => (master, kappa(a, &mut inputs)?),
        Command::Gen(a) => (master, gen(a, master, &mut inputs, to_dir)?),
        Command::Traces(a) => {
            let config = inputs.arena_config(&a.config)?;
            let seed = seed.unwrap_or(config.seed);
            (seed, traces(a, config, seed, to_dir)?)
        }
        Command::Replay(_) => unreachable!("replay is dispatched by the caller"),
    };
    Ok(Run {
        seed,
        inputs: inputs.0,
        report,
    })
}

fn rank(a: &RankArgs, seed: u64, inputs: &mut Inputs) -> Result<Report, CliError> {
    let ds = inputs.dataset(&a.input, a.format.as_deref())?;
    let opts = fit_options(&a.fit);
    let mut text;
    if a.bootstrap > 0 {
        let BootstrapLeaderboard {
            leaderboard,
            resamples,
            skipped,
        } = bootstrap_ranks(&ds, a.bootstrap, derive(seed, stream::BOOTSTRAP), &opts)?;
        text = leaderboard.render();
        let _ = writeln!(text, "\nBootstrap: {resamples} resamples, 95% percentile rank intervals");
        for (model, count) in skipped.iter().filter(|(_, c)| *c > 0) {
            let _ = writeln!(text, "  {model}: absent from {count} resamples");
        }
        let mut report = Report::default();
        report.file("leaderboard.csv", leaderboard.to_csv());
        report.file("leaderboard.txt", text.clone());
        report.stdout = text;
        return Ok(report);
    }
    let board = leaderboard(&fit_bt(&ds, &opts)?);
    text = board.render();
    let mut report = Report::default();
    report.file("leaderboard.csv", board.to_csv());
    report.file("leaderboard.txt", text.clone());
    report.stdout = text;
    Ok(report)
}

fn corrupt(a: &CorruptArgs, seed: u64, inputs: &mut Inputs) -> Result<Report, CliError> {
    let ds = inputs.dataset(&a.input, a.format.as_deref())?;
    let mode: CorruptionMode = a.mode.parse().map_err(CliError::invalid)?;
    let target = a.target.as_deref().map(model_id).transpose()?;
    let competitors = a.competitors.iter().map(|c| model_id(c)).collect::<Result<Vec<_>, _>>()?;
    let rows = a.models.iter().map(|m| model_id(m)).collect::<Result<Vec<_>, _>>()?;
    if let Some(missing) = rows.iter().find(|m| ds.index_of(m).is_none()) {
        return Err(CliError::invalid(format!("--models: `{missing}` is not in the roster")));
    }
    let base_seed = derive(seed, stream::CORRUPTION);
    let specs: Vec<CorruptionSpec> = a
        .rate
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let s = derive(base_seed, i as u64);
            let spec = match (mode, &target) {
                (CorruptionMode::Apathetic, _) => CorruptionSpec::apathetic(rate, s),
                (_, Some(t)) => CorruptionSpec::adversarial(mode, rate, t.clone(), s)
                    .with_detector(a.tpr, a.tnr)
                    .with_competitors(competitors.clone()),
                (_, None) => return Err(CliError::invalid(format!("{mode} mode needs --target"))),
            };
            spec.validate(&ds)?;
            Ok(spec)
        })
        .collect::<Result<_, CliError>>()?;
    if a.trials == 0 {
        return Err(CliError::invalid("--trials must be at least 1"));
    }

    let opts = fit_options(&a.fit);
    let base = leaderboard(&fit_bt(&ds, &opts)?);
    let summaries = specs
        .iter()
        .map(|spec| displacement_against(&ds, &base, spec, a.trials, &opts))
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = format!("Mode: {mode}, {} trials per rate\n", a.trials);
    text += &render_rate_table(&base, &summaries, (!rows.is_empty()).then_some(&rows[..]));
    for s in summaries.iter().filter(|s| s.failures() > 0) {
        let _ = writeln!(text, "r={}: {} trials failed to fit and were excluded", s.rate_percent, s.failures());
    }
    let mut summary_csv = String::new();
    let mut trials_csv = String::new();
    for (i, s) in summaries.iter().enumerate() {
        summary_csv += &s.summary_csv(i == 0);
        trials_csv += &s.trials_csv(i == 0);
    }
    let mut report = Report::default();
    report.file("baseline.csv", base.to_csv());
    report.file("displacement.txt", text.clone());
    report.file("summary.csv", summary_csv);
    report.file("trials.csv", trials_csv);
    report.stdout = text;
    Ok(report)
}

fn attribute(a: &AttributeArgs, inputs: &mut Inputs) -> Result<Report, CliError> {
    let traces = read_traces(&inputs.bytes(&a.traces)?[..]).map_err(|e| CliError::from(e).at(&a.traces))?;
    if traces.is_empty() {
        return Err(CliError::from(AttributionError::NoTraces).at(&a.traces));
    }
    let params = AttributionParams::new(a.p, a.t)?;
    let target = a.target.as_deref().map(model_id).transpose()?;
    if a.sweep && target.is_none() {
        return Err(CliError::invalid("--sweep needs --target"));
    }

    let mut csv = String::from("trace,true_source,tokens,confidence,decision\n");
    let mut attributed = 0;
    for (i, trace) in traces.iter().enumerate() {
        let c = trace.confidence(params.p());
        let decision = c >= params.t();
        attributed += usize::from(decision);
        let source = trace.true_source.as_ref().map(ModelId::as_str).unwrap_or("");
        let _ = writeln!(csv, "{i},{source},{},{c},{}", trace.len(), u8::from(decision));
    }
    let mut text = format!(
        "Traces: {}\nParameters: p = {}, t = {}\nAttributed: {attributed}\n",
        traces.len(),
        params.p(),
        params.t()
    );
    let mut report = Report::default();
    report.file("confidences.csv", csv);
    if let Some(target) = &target {
        let q = evaluate_detector(&traces, target, &params)?;
        text += "\n";
        text += &render_quality_table(&[(target.clone(), q)]);
    }
    if let (true, Some(target)) = (a.sweep, &target) {
        let rows = sweep_detector(&traces, target, &DEFAULT_P_GRID, &default_t_grid())?;
        let mut sweep = String::from("p,t,tpr,tnr\n");
        for r in &rows {
            let _ = writeln!(sweep, "{},{},{},{}", r.params.p(), r.params.t(), r.quality.tpr, r.quality.tnr);
        }
        report.file("sweep.csv", sweep);
        if let Some(best) = best_row(&rows) {
            let _ = write!(text, "\nBest grid point: p = {}, t = {}\n", best.params.p(), best.params.t());
            text += &render_quality_table(&[(target.clone(), best.quality)]);
        }
    }
    report.file("attribution.txt", text.clone());
    report.stdout = text;
    Ok(report)
}

fn simulate(a: &SimulateArgs, mut config: ArenaConfig, seed: u64) -> Result<Report, CliError> {
    if a.battles == 0 {
        return Err(CliError::invalid("--battles must be at least 1"));
    }
    if a.no_attacker {
        config.attacker = None;
    }
    let outcome = run_arena(&config, a.battles, derive(seed, stream::ARENA))?;
    let board = fit_bt(&outcome.battles, &fit_options(&a.fit))
        .map(|s| leaderboard(&s))
        .map_err(CliError::runtime)?;

    let mut text = format!(
        "Battles: {} simulated, {} recorded\n",
        outcome.battles_run,
        outcome.battles.len()
    );
    let mut report = Report::default();
    report.file("battles.jsonl", outcome.battles.to_jsonl_string());
    if let Some(att) = &config.attacker {
        let stats = outcome.attacker_stats.render();
        let _ = write!(text, "\nAttacker (target {}):\n{stats}", att.target);
        report.file("attacker_stats.txt", stats);
    }
    text += "\n";
    text += &board.render();
    report.file("leaderboard.txt", board.render());
    report.file("leaderboard.csv", board.to_csv());
    report.stdout = text;
    Ok(report)
}

fn kappa(a: &KappaArgs, inputs: &mut Inputs) -> Result<Report, CliError> {
    let table = kappa_table_from_csv(&inputs.bytes(&a.ratings)?[..]).map_err(|e| CliError::from(e).at(&a.ratings))?;
    let text = table.render(!a.raw);
    let mut report = Report::default();
    report.file("kappa.csv", table.to_csv());
    report.file("kappa.txt", text.clone());
    report.stdout = text;
    Ok(report)
}

fn gen(a: &GenArgs, seed: u64, inputs: &mut Inputs, to_dir: bool) -> Result<Report, CliError> {
    let kv = KeyValues::parse(&inputs.text(&a.models)?).map_err(|e| CliError::from(e).at(&a.models))?;
    let spec = GroundTruthModelSpec::from_key_values(&kv).map_err(|e| CliError::from(e).at(&a.models))?;
    let ds = generate_synthetic(&spec, a.n, derive(seed, stream::SYNTHETIC))?;
    let jsonl = ds.to_jsonl_string();
    let stdout = if to_dir {
        format!("Generated {} battles over {} models\n", ds.len(), ds.roster().len())
    } else {
        jsonl.clone()
    };
    Ok(Report {
        stdout,
        files: vec![("battles.jsonl".into(), jsonl.into_bytes())],
    })
}

fn traces(a: &TracesArgs, config: ArenaConfig, seed: u64, to_dir: bool) -> Result<Report, CliError> {
    let target = model_id(&a.target)?;
    if a.per_model == 0 {
        return Err(CliError::invalid("--per-model must be at least 1"));
    }
    let traces = detector_traces(&config, &target, a.per_model, a.length, derive(seed, stream::TRACES))?;
    let mut jsonl = Vec::new();
    write_traces(&traces, &mut jsonl).map_err(CliError::runtime)?;
    let stdout = if to_dir {
        format!("Traced {} outputs under `{target}`\n", traces.len())
    } else {
        String::from_utf8(jsonl.clone()).expect("traces are UTF-8")
    };
    Ok(Report {
        stdout,
        files: vec![("traces.jsonl".into(), jsonl)],
    })
}
