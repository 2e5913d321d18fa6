//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except for plain data accessors.
#![allow(dead_code)]

use arena_fragility::{ModelId, PreferenceDataset, PreferenceRecord, VoteLabel};

pub fn id(name: &str) -> ModelId {
    ModelId::new(name).unwrap()
}

pub fn record(left: &str, right: &str, label: VoteLabel) -> PreferenceRecord {
    PreferenceRecord::new(id(left), id(right), label)
}

/// Dataset with `a_wins` wins for `a`, `b_wins` for `b` and `ties` ties.
pub fn head_to_head(a: &str, b: &str, a_wins: usize, b_wins: usize, ties: usize) -> PreferenceDataset {
    let mut records = Vec::new();
    records.extend((0..a_wins).map(|_| record(a, b, VoteLabel::LeftWins)));
    records.extend((0..b_wins).map(|_| record(a, b, VoteLabel::RightWins)));
    records.extend((0..ties).map(|_| record(a, b, VoteLabel::Tie)));
    PreferenceDataset::from_records(records).unwrap()
}

/// Per ordered pair (i, j): credit earned by i against j, one tie being half.
struct Credits {
    k: usize,
    credit: Vec<f64>,
    total: f64,
}

fn credits(ds: &PreferenceDataset) -> Credits {
    let k = ds.roster().len();
    let pos = |m: &ModelId| ds.roster().iter().position(|r| r == m).unwrap();
    let mut credit = vec![0.0; k * k];
    for r in ds.records() {
        let (i, j) = (pos(&r.left), pos(&r.right));
        let (ci, cj) = match r.label {
            VoteLabel::LeftWins => (1.0, 0.0),
            VoteLabel::RightWins => (0.0, 1.0),
            VoteLabel::Tie => (0.5, 0.5),
        };
        credit[i * k + j] += ci;
        credit[j * k + i] += cj;
    }
    Credits {
        k,
        credit,
        total: ds.len() as f64,
    }
}

/// Tie-split Bradley-Terry log-likelihood per battle minus `lambda * |s|^2`.
fn objective(c: &Credits, s: &[f64], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..c.k {
        for j in 0..c.k {
            let w = c.credit[i * c.k + j];
            if w > 0.0 {
                // ln sigma(x) = -ln(1 + e^-x)
                ll -= w * (-(s[i] - s[j])).exp().ln_1p();
            }
        }
    }
    ll / c.total - lambda * s.iter().map(|x| x * x).sum::<f64>()
}

/// Brute-force grid maximiser of the penalised likelihood over zero-mean
/// scores in `[-5, 5]`, for 2 or 3 models. A step-0.05 scan of the whole box
/// is refined by a step-0.001 scan around the best coarse point; the
/// objective is concave, so the refined window always contains the optimum.
pub fn grid_mle(ds: &PreferenceDataset, lambda: f64) -> Vec<f64> {
    let c = credits(ds);
    let scan = |lo: f64, hi: f64, step: f64, best: &mut (f64, Vec<f64>)| {
        let n = ((hi - lo) / step).round() as i64;
        match c.k {
            2 => {
                for a in 0..=n {
                    let x = lo + a as f64 * step;
                    let s = [x, -x];
                    let f = objective(&c, &s, lambda);
                    if f > best.0 {
                        *best = (f, s.to_vec());
                    }
                }
            }
            3 => {
                for a in 0..=n {
                    let x = lo + a as f64 * step;
                    for b in 0..=n {
                        let y = lo + b as f64 * step;
                        let z = -x - y;
                        if z.abs() > 5.0 {
                            continue;
                        }
                        let s = [x, y, z];
                        let f = objective(&c, &s, lambda);
                        if f > best.0 {
                            *best = (f, s.to_vec());
                        }
                    }
                }
            }
            k => panic!("grid oracle supports 2 or 3 models, got {k}"),
        }
    };
    let mut best = (f64::NEG_INFINITY, Vec::new());
    scan(-5.0, 5.0, 0.05, &mut best);
    let centre = best.1.clone();
    let mut fine = (f64::NEG_INFINITY, Vec::new());
    match c.k {
        2 => scan(centre[0] - 0.1, centre[0] + 0.1, 1e-3, &mut fine),
        _ => {
            // Scan a window centred on the coarse optimum in both free coordinates.
            let n = 200i64;
            for a in 0..=n {
                let x = centre[0] - 0.1 + a as f64 * 1e-3;
                for b in 0..=n {
                    let y = centre[1] - 0.1 + b as f64 * 1e-3;
                    let s = [x, y, -x - y];
                    let f = objective(&c, &s, lambda);
                    if f > fine.0 {
                        fine = (f, s.to_vec());
                    }
                }
            }
        }
    }
    fine.1
}

/// Fleiss' kappa computed from per-item label lists by counting agreeing
/// ordered annotator pairs directly.
pub fn kappa_by_pairs(labels: &[Vec<usize>], categories: usize) -> f64 {
    let n = labels[0].len();
    let mut agreement = 0.0;
    let mut totals = vec![0usize; categories];
    for item in labels {
        let mut agreeing = 0usize;
        for (a, la) in item.iter().enumerate() {
            totals[*la] += 1;
            for (b, lb) in item.iter().enumerate() {
                if a != b && la == lb {
                    agreeing += 1;
                }
            }
        }
        agreement += agreeing as f64 / (n * (n - 1)) as f64;
    }
    let p_bar = agreement / labels.len() as f64;
    let all = (labels.len() * n) as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    (p_bar - p_e) / (1.0 - p_e)
}

/// Builds the minimal top-`p` cover by walking tokens in descending
/// probability, placing `realized` first among equally likely tokens, and
/// reports whether `realized` made it in.
pub fn in_top_p_cover(dist: &[f64], realized: usize, p: f64) -> bool {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| {
        dist[b]
            .total_cmp(&dist[a])
            .then_with(|| (b == realized).cmp(&(a == realized)))
    });
    let mut mass = 0.0;
    let mut cover = Vec::new();
    for &tok in &order {
        if mass >= p || dist[tok] == 0.0 {
            break;
        }
        cover.push(tok);
        mass += dist[tok];
    }
    cover.contains(&realized)
}
