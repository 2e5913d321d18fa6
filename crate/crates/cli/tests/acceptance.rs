//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Run with `cargo test -p arena-fragility-cli --test acceptance -- --nocapture`
//! to see the report. Criterion 5 needs the released 55k arena CSV; point
//! `ARENA_55K_CSV` at it or the criterion is skipped.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use arena_fragility::arenasim::{run_arena, ArenaConfig, ArenaModel, AttackerConfig, Fallback};
use arena_fragility::attribution::corpus::desk_model;
use arena_fragility::attribution::{
    best_row, default_t_grid, generate, greedy_decode, step_evidence, sweep_detector,
    trace_from_model, AttributionParams, SamplingParams, SequenceTrace, StationaryModel, Token,
    DEFAULT_P_GRID,
};
use arena_fragility::corruption::{corrupt, displacement_experiment};
use arena_fragility::prefdata::parse_lmsys_csv;
use arena_fragility::{
    corrupt_adversarial, corrupt_apathetic, fit_bt, fleiss_kappa, generate_synthetic, leaderboard,
    seed, win_matrix, CorruptionMode, CorruptionSpec, FitOptions, GroundTruthModelSpec, ModelId,
    PreferenceDataset, RatingsMatrix, VoteLabel,
};
use common::{grid_mle, head_to_head, id, in_top_p_cover, kappa_by_pairs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn spec_from(pairs: &[(String, f64)], tie: f64) -> GroundTruthModelSpec {
    let refs: Vec<(&str, f64)> = pairs.iter().map(|(m, s)| (m.as_str(), *s)).collect();
    GroundTruthModelSpec::from_pairs(&refs, tie).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let opts = FitOptions::default();
    let worst = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 + s);
            let k = rng.gen_range(2..=3);
            let pairs: Vec<(String, f64)> = (0..k).map(|i| (format!("m{i}"), rng.gen_range(-1.5..1.5))).collect();
            let ds = generate_synthetic(&spec_from(&pairs, rng.gen_range(0.0..0.3)), rng.gen_range(60..=500), s).unwrap();
            let fitted = fit_bt(&ds, &opts).unwrap();
            let oracle = grid_mle(&ds, opts.regularization);
            fitted.scores().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    let tiny = FitOptions {
        regularization: 1e-12,
        ..FitOptions::default()
    };
    let mut closed = 0.0f64;
    for (a, b, t) in [(75, 25, 0), (60, 20, 20), (9, 91, 0), (500, 499, 1), (33, 47, 20)] {
        let ds = head_to_head("A", "B", a, b, t);
        let s = fit_bt(&ds, &tiny).unwrap();
        let rate = (a as f64 + 0.5 * t as f64) / (a + b + t) as f64;
        let gap = s.score_of("A").unwrap() - s.score_of("B").unwrap();
        closed = closed.max((gap - (rate / (1.0 - rate)).ln()).abs());
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst < 2e-3 && closed < 1e-3 && elapsed < Duration::from_secs(30),
        format!(
            "max |fit - grid| = {worst:.2e} over 100 datasets, closed-form error {closed:.2e}, {}",
            secs(elapsed)
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let correct = (0..20u64)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(2_000 + s);
            let mut score = 1.0;
            let pairs: Vec<(String, f64)> = (0..8)
                .map(|i| {
                    let p = (format!("m{i}"), score);
                    score -= 0.25 + rng.gen_range(0.0..0.25);
                    p
                })
                .collect();
            let ds = generate_synthetic(&spec_from(&pairs, 0.1), 10_000, s).unwrap();
            let board = leaderboard(&fit_bt(&ds, &FitOptions::default()).unwrap());
            board
                .entries()
                .iter()
                .zip(&pairs)
                .all(|(e, (m, _))| e.model.as_str() == m)
        })
        .count();
    let elapsed = start.elapsed();
    Outcome::check(
        correct >= 19 && elapsed < Duration::from_secs(60),
        format!("true order recovered in {correct}/20 seeds (8 models, gaps >= 0.25), {}", secs(elapsed)),
    )
}

fn ten_model_spec() -> Vec<(String, f64)> {
    (0..10).map(|i| (format!("m{i}"), 1.0 - 0.2 * i as f64)).collect()
}

fn criterion_3() -> Outcome {
    let ds = generate_synthetic(&spec_from(&ten_model_spec(), 0.1), 30_000, 3).unwrap();
    let specs = [
        CorruptionSpec::apathetic(0.0, 1),
        CorruptionSpec::adversarial(CorruptionMode::AdversarialFlip, 0.0, id("m5"), 1).with_detector(0.6, 0.7),
        CorruptionSpec::adversarial(CorruptionMode::AdversarialInject, 0.0, id("m5"), 1),
    ];
    let identity = specs.iter().all(|s| {
        let out = corrupt(&ds, s).unwrap();
        out == ds && out.to_jsonl_string() == ds.to_jsonl_string()
    });

    let noisy = corrupt_apathetic(&ds, 100.0, 4).unwrap();
    let ties = noisy.records().iter().filter(|r| r.label == VoteLabel::Tie).count() as f64 / noisy.len() as f64;
    let wm = win_matrix(&noisy);
    let mut worst_z = 0.0f64;
    for i in 0..10 {
        for j in (i + 1)..10 {
            let sigma = (1.0 / 6.0 / wm.battles(i, j) as f64).sqrt();
            worst_z = worst_z.max((wm.get(i, j).unwrap() - 0.5).abs() / sigma);
        }
    }
    Outcome::check(
        identity && (ties - 1.0 / 3.0).abs() < 0.01 && worst_z < 3.0,
        format!("r=0 identity {identity}, r=100 tie fraction {ties:.4}, worst win-rate deviation {worst_z:.2} sigma"),
    )
}

fn criterion_4() -> Outcome {
    let spec = spec_from(&ten_model_spec(), 0.1);
    let rates = [0.0, 10.0, 50.0, 100.0];
    let per_seed: Vec<[f64; 4]> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let ds = generate_synthetic(&spec, 3_000, 4_000 + s).unwrap();
            let mut row = [0.0; 4];
            for (k, &rate) in rates.iter().enumerate() {
                let c = CorruptionSpec::adversarial(CorruptionMode::AdversarialInject, rate, id("m6"), s);
                let fitted = fit_bt(&corrupt_adversarial(&ds, &c).unwrap(), &FitOptions::default()).unwrap();
                row[k] = fitted.score_of("m6").unwrap();
            }
            row
        })
        .collect();
    let means: Vec<f64> = (0..4).map(|k| per_seed.iter().map(|r| r[k]).sum::<f64>() / 50.0).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);

    // The weakest model, topped up with extra battles so it appears in over 20% of them.
    let mut records = generate_synthetic(&spec, 10_000, 41).unwrap().into_records();
    for j in 0..9 {
        let pair = spec_from(&[("m9".into(), -0.8), (format!("m{j}"), 1.0 - 0.2 * j as f64)], 0.1);
        records.extend(generate_synthetic(&pair, 150, 50 + j).unwrap().into_records());
    }
    let ds = PreferenceDataset::from_records(records).unwrap();
    let share = ds.records().iter().filter(|r| r.involves(&id("m9"))).count() as f64 / ds.len() as f64;
    let before = leaderboard(&fit_bt(&ds, &FitOptions::default()).unwrap()).rank_of_name("m9").unwrap();
    let flip = CorruptionSpec::adversarial(CorruptionMode::AdversarialFlip, 100.0, id("m9"), 7);
    let after = leaderboard(&fit_bt(&corrupt_adversarial(&ds, &flip).unwrap(), &FitOptions::default()).unwrap())
        .rank_of_name("m9")
        .unwrap();
    Outcome::check(
        monotone && share >= 0.2 && after == 1,
        format!(
            "inject mean target score {} over r=0/10/50/100; flip r=100 moves target {before} -> {after} (share {:.1}%)",
            means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join("/"),
            share * 100.0
        ),
    )
}

fn find_model<'a>(ds: &'a PreferenceDataset, name: &str) -> Option<&'a ModelId> {
    ds.roster().iter().find(|m| m.as_str().eq_ignore_ascii_case(name))
}

fn criterion_5() -> Outcome {
    let Some(path) = std::env::var_os("ARENA_55K_CSV") else {
        return Outcome {
            verdict: Verdict::Skip,
            detail: "ARENA_55K_CSV not set; the released 55k dataset is required (criteria 1-4 stand in)".into(),
        };
    };
    let path = Path::new(&path);
    let ds = match std::fs::File::open(path).map_err(|e| e.to_string()).and_then(|f| parse_lmsys_csv(f).map_err(|e| e.to_string())) {
        Ok(ds) => ds,
        Err(e) => return Outcome::check(false, format!("{}: {e}", path.display())),
    };
    let targets = [("llama-2-7b-chat", 21usize), ("llama-2-13b-chat", 39), ("mistral-7b-instruct-v0.2", 36)];
    let opts = FitOptions::default();
    let base = leaderboard(&fit_bt(&ds, &opts).unwrap());
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, paper_rank) in targets {
        let Some(model) = find_model(&ds, name) else {
            return Outcome::check(false, format!("model {name} missing from dataset"));
        };
        let rank = base.rank_of(model).unwrap();
        ok &= rank.abs_diff(paper_rank) <= 2;
        notes.push(format!("{name} base {rank} (paper {paper_rank})"));
    }
    let apathetic = displacement_experiment(&ds, &CorruptionSpec::apathetic(10.0, 55), 100, &opts).unwrap();
    for name in ["llama-2-13b-chat", "mistral-7b-instruct-v0.2"] {
        let model = find_model(&ds, name).unwrap();
        let m = apathetic.model(model.as_str()).unwrap();
        ok &= m.median_abs_delta >= 3.0;
        notes.push(format!("{name} apathetic median |d| {}", m.median_abs_delta));
    }
    for (name, _) in targets {
        let model = find_model(&ds, name).unwrap().clone();
        let spec = CorruptionSpec::adversarial(CorruptionMode::AdversarialFlip, 10.0, model.clone(), 56);
        let adv = displacement_experiment(&ds, &spec, 100, &opts).unwrap();
        let m = adv.model(model.as_str()).unwrap();
        ok &= m.median_delta >= 4.0;
        notes.push(format!("{name} flip median gain {}", m.median_delta));
    }
    Outcome::check(ok, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let p_grid = [0.05, 0.25, 0.4, 0.5, 0.6, 0.75, 0.8, 0.9, 0.99, 1.0];

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = 0usize;
    let mut cases = 0usize;
    for _ in 0..2_000 {
        let size = rng.gen_range(2..=6);
        let mut counts = vec![0u32; size];
        for _ in 0..20 {
            counts[rng.gen_range(0..size)] += 1;
        }
        let dist: Vec<f64> = counts.iter().map(|&c| c as f64 / 20.0).collect();
        for realized in 0..size {
            let (prob, above) = step_evidence(&dist, realized as Token);
            let trace = SequenceTrace::from_pairs(&[(prob, above)], None).unwrap();
            for p in p_grid {
                cases += 1;
                disagreements += usize::from(trace.steps()[0].in_cover(p) != in_top_p_cover(&dist, realized, p));
            }
        }
    }
    for probs in [vec![0.5, 0.25, 0.25], vec![0.4, 0.4, 0.2], vec![1.0 / 3.0; 3], vec![0.6, 0.4, 0.0]] {
        let model = StationaryModel::new(probs.clone()).unwrap();
        for code in 0..3usize.pow(8) {
            let seq: Vec<Token> = (0..8).map(|i| ((code / 3usize.pow(i)) % 3) as Token).collect();
            let trace = trace_from_model(&model, &[], &seq).unwrap();
            for p in p_grid {
                cases += 1;
                let expected = seq.iter().filter(|&&t| in_top_p_cover(&probs, t as usize, p)).count() as f64 / 8.0;
                disagreements += usize::from(trace.confidence(p) != expected);
            }
        }
    }

    let greedy_ok = (0..5).all(|s| {
        let m = desk_model(s).unwrap();
        let trace = trace_from_model(&m, &[], &greedy_decode(&m, &[], 200)).unwrap();
        p_grid.iter().all(|&p| trace.confidence(p) == 1.0)
    });

    let target = desk_model(1).unwrap();
    let other = desk_model(2).unwrap();
    let sampling = SamplingParams::default();
    let mut traces = Vec::new();
    for (name, model) in [("target", &target), ("other", &other)] {
        for i in 0..100 {
            let mut rng = seed::rng(seed::derive(66, i));
            let g = generate(model, &[], 200, &sampling, &mut rng);
            traces.push(trace_from_model(&target, &[], &g.tokens).unwrap().with_source(Some(id(name))));
        }
    }
    let monotone = traces.iter().all(|t| p_grid.windows(2).all(|w| t.confidence(w[0]) <= t.confidence(w[1])));
    let rows = sweep_detector(&traces, &id("target"), &DEFAULT_P_GRID, &default_t_grid()).unwrap();
    let best = best_row(&rows).unwrap();
    let elapsed = start.elapsed();
    Outcome::check(
        disagreements == 0
            && greedy_ok
            && monotone
            && best.quality.tpr >= 0.9
            && best.quality.tnr >= 0.8
            && elapsed < Duration::from_secs(60),
        format!(
            "{disagreements}/{cases} cover disagreements, greedy c=1 {greedy_ok}, monotone in p {monotone}, \
             desk detector TPR {:.3} TNR {:.3} at p={} t={}, {}",
            best.quality.tpr,
            best.quality.tnr,
            best.params.p(),
            best.params.t(),
            secs(elapsed)
        ),
    )
}

const ARENA_SEEDS: [u64; 6] = [11, 12, 13, 14, 15, 16];

fn arena(target_weight: f64, attacker: bool) -> ArenaConfig {
    let models = ARENA_SEEDS
        .iter()
        .enumerate()
        .map(|(i, &s)| ArenaModel::new(id(&format!("m{i}")), Arc::new(desk_model(s).unwrap())))
        .collect();
    let mut config = ArenaConfig::new(models);
    config.generation_length = 32;
    config.honest.epsilon = 0.1;
    let target = mid_pack_target();
    let ti = config.index_of(&target).unwrap();
    config.models[ti].weight = target_weight;
    if attacker {
        config.attacker = Some(AttackerConfig {
            target,
            params: AttributionParams::default(),
            fallback: Fallback::Tie,
            rate: 0.1,
        });
    }
    config
}

/// The model ranked fourth of six in an unattacked, uniformly weighted run.
fn mid_pack_target() -> ModelId {
    static TARGET: std::sync::OnceLock<ModelId> = std::sync::OnceLock::new();
    TARGET
        .get_or_init(|| {
            let models = ARENA_SEEDS
                .iter()
                .enumerate()
                .map(|(i, &s)| ArenaModel::new(id(&format!("m{i}")), Arc::new(desk_model(s).unwrap())))
                .collect();
            let mut config = ArenaConfig::new(models);
            config.generation_length = 32;
            config.honest.epsilon = 0.1;
            let out = run_arena(&config, 6_000, 999).unwrap();
            leaderboard(&fit_bt(&out.battles, &FitOptions::default()).unwrap()).entries()[3]
                .model
                .clone()
        })
        .clone()
}

fn criterion_7() -> Outcome {
    let target = mid_pack_target();
    let paired: Vec<(usize, usize)> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let rank = |attacker| {
                let out = run_arena(&arena(5.0, attacker), 10_000, 7_000 + s).unwrap();
                leaderboard(&fit_bt(&out.battles, &FitOptions::default()).unwrap())
                    .rank_of(&target)
                    .unwrap()
            };
            (rank(true), rank(false))
        })
        .collect();
    let better = paired.iter().filter(|(a, b)| a < b).count();

    let shares: Vec<f64> = [1.0, 2.0, 5.0]
        .iter()
        .map(|&w| {
            (0..20u64)
                .into_par_iter()
                .map(|s| {
                    let st = run_arena(&arena(w, true), 2_000, 8_000 + s).unwrap().attacker_stats;
                    st.votes_cast_for_target as f64 / st.battles_seen.max(1) as f64
                })
                .sum::<f64>()
                / 20.0
        })
        .collect();
    let monotone = shares.windows(2).all(|w| w[1] >= w[0]);
    Outcome::check(
        better >= 18 && monotone,
        format!(
            "target {target}: attacked rank better in {better}/20 paired seeds; vote share {} at weights 1/2/5",
            shares.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join("/")
        ),
    )
}

fn criterion_8() -> Outcome {
    let perfect = RatingsMatrix::from_counts(vec![vec![4, 0], vec![0, 4], vec![4, 0]]).unwrap();
    let perfect_ok = fleiss_kappa(&perfect).unwrap() == 1.0;
    let hand = RatingsMatrix::from_counts(vec![vec![2, 0], vec![0, 2], vec![1, 1]]).unwrap();
    let hand_err = (fleiss_kappa(&hand).unwrap() - 1.0 / 3.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 1_000 {
        let items = rng.gen_range(1..12);
        let annotators = rng.gen_range(2..7);
        let categories = rng.gen_range(2..6);
        let labels: Vec<Vec<usize>> = (0..items)
            .map(|_| (0..annotators).map(|_| rng.gen_range(0..categories)).collect())
            .collect();
        let counts = labels
            .iter()
            .map(|item| {
                let mut row = vec![0u32; categories];
                item.iter().for_each(|&l| row[l] += 1);
                row
            })
            .collect();
        if let Ok(k) = fleiss_kappa(&RatingsMatrix::from_counts(counts).unwrap()) {
            worst = worst.max((k - kappa_by_pairs(&labels, categories)).abs());
            checked += 1;
        }
    }
    Outcome::check(
        perfect_ok && hand_err < 1e-12 && worst < 1e-12,
        format!("perfect agreement {perfect_ok}, 3-item case error {hand_err:.1e}, worst oracle gap {worst:.1e} over 1000 matrices"),
    )
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_arena-fragility"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run cli")
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("models.kv"),
        "models.alpha.score = 0.9\nmodels.beta.score = 0.4\nmodels.gamma.score = 0\nmodels.delta.score = -0.6\ntie_probability = 0.1\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("arena.kv"),
        "seed = 3\nmodels.a.synthetic = 1\nmodels.b.synthetic = 2\nmodels.c.synthetic = 3\nmodels.c.weight = 3\n\
         attacker.target = c\nattacker.rate = 0.3\nattacker.fallback = random\nhonest.epsilon = 0.1\n\
         generation.length = 24\ncorpus.length = 5000\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("ratings.csv"),
        "item_id,annotator_id,dimension,category\n1,a,Th,x\n1,b,Th,x\n2,a,Th,y\n2,b,Th,x\n3,a,Th,y\n3,b,Th,y\n",
    )
    .unwrap();

    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("gen", vec!["gen", "--models", "models.kv", "--n", "4000", "--seed", "9"]),
        ("rank", vec!["rank", "--input", "gen/battles.jsonl", "--bootstrap", "50", "--seed", "7"]),
        ("corrupt", vec!["corrupt", "--input", "gen/battles.jsonl", "--mode", "apathetic", "--rate", "10,50", "--trials", "20", "--seed", "7"]),
        ("flip", vec!["corrupt", "--input", "gen/battles.jsonl", "--mode", "adversarial_flip", "--target", "delta", "--rate", "10", "--trials", "20", "--tpr", "0.9", "--tnr", "0.8"]),
        ("simulate", vec!["simulate", "--config", "arena.kv", "--battles", "500"]),
        ("traces", vec!["traces", "--config", "arena.kv", "--target", "c", "--per-model", "10", "--length", "100", "--seed", "4"]),
        ("attribute", vec!["attribute", "--traces", "traces/traces.jsonl", "--target", "c", "--sweep"]),
        ("kappa", vec!["kappa", "--ratings", "ratings.csv"]),
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for (name, args) in &runs {
        let mut full = args.clone();
        full.extend(["--out", name]);
        let first = cli(&full, dir);
        if !first.status.success() {
            problems.push(format!("{name}: {}", String::from_utf8_lossy(&first.stderr).trim()));
            continue;
        }
        let replay_dir = format!("{name}-replay");
        let manifest = format!("{name}/manifest.json");
        let again = cli(&["replay", "--manifest", &manifest, "--out", &replay_dir], dir);
        if !again.status.success() {
            problems.push(format!("{name} replay: {}", String::from_utf8_lossy(&again.stderr).trim()));
            continue;
        }
        let original = dir_files(&dir.join(name));
        let replayed = dir_files(&dir.join(&replay_dir));
        if original != replayed {
            problems.push(format!("{name}: replayed reports differ"));
        }
        compared += original.len();
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} commands replayed from manifests, {compared} files byte-identical", runs.len())
        } else {
            problems.join("; ")
        },
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("Bradley-Terry oracle equivalence", criterion_1),
        ("ranking recovery", criterion_2),
        ("corruption identity and limits", criterion_3),
        ("adversarial monotonicity", criterion_4),
        ("55k dataset reproduction", criterion_5),
        ("attribution correctness", criterion_6),
        ("attack loop end to end", criterion_7),
        ("Fleiss' kappa", criterion_8),
        ("CLI reproducibility", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed.push(i + 1);
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("criterion {} [{tag}] {name}: {}", i + 1, outcome.detail);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
