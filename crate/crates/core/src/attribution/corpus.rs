//! Procedurally generated training corpora.
//!
//! Each corpus is sampled from its own random second-order Markov chain
//! over a fixed alphabet: every two-character context allows a small,
//! randomly chosen set of successors with random weights. Corpora from
//! different seeds therefore have different local statistics, which is what
//! the attribution detector keys on.

use rand::seq::index;
use rand::Rng as _;

use super::model::{train_with_vocabulary, NgramModel, Vocabulary};
use super::AttributionError;
use crate::seed;

pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz ";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub alphabet: Vec<char>,
    pub length: usize,
    /// Successors allowed per context.
    pub branching: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            alphabet: DEFAULT_ALPHABET.chars().collect(),
            length: 40_000,
            branching: 6,
        }
    }
}

pub fn synthetic_corpus(spec: &CorpusSpec, seed: u64) -> String {
    let a = spec.alphabet.len();
    let branching = spec.branching.clamp(1, a);
    let mut rng = seed::rng(seed);
    let chain: Vec<(Vec<usize>, Vec<f64>)> = (0..a * a)
        .map(|_| {
            let next = index::sample(&mut rng, a, branching).into_vec();
            let weights: Vec<f64> = next.iter().map(|_| 0.05 + rng.gen::<f64>().powi(2)).collect();
            (next, weights)
        })
        .collect();
    let mut prev = (rng.gen_range(0..a), rng.gen_range(0..a));
    let mut out = String::with_capacity(spec.length);
    for _ in 0..spec.length {
        let (next, weights) = &chain[prev.0 * a + prev.1];
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = next[next.len() - 1];
        for (&n, &w) in next.iter().zip(weights) {
            u -= w;
            if u < 0.0 {
                pick = n;
                break;
            }
        }
        out.push(spec.alphabet[pick]);
        prev = (prev.1, pick);
    }
    out
}

/// Trigram model (add-0.01) trained on the corpus generated from `seed`,
/// over the default alphabet.
pub fn desk_model(seed: u64) -> Result<NgramModel, AttributionError> {
    let spec = CorpusSpec::default();
    let corpus = synthetic_corpus(&spec, seed);
    train_with_vocabulary(&corpus, Vocabulary::from_chars(spec.alphabet.iter().copied()), 3, 0.01)
}
