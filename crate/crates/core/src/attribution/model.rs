//! Token models: anything that yields a next-token distribution over a
//! fixed vocabulary, plus the character n-gram models used as desk-scale
//! stand-ins for real LLMs.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};

use rand::Rng as _;

use super::AttributionError;
use crate::seed::Rng;

pub type Token = u32;

/// Source of next-token distributions.
///
/// `distribution` must return `vocab_size()` non-negative values summing to
/// one (within 1e-9) for any context of in-vocabulary tokens.
pub trait TokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn distribution(&self, context: &[Token]) -> Cow<'_, [f64]>;
}

impl<M: TokenModel + ?Sized> TokenModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn distribution(&self, context: &[Token]) -> Cow<'_, [f64]> {
        (**self).distribution(context)
    }
}

impl<M: TokenModel + ?Sized> TokenModel for std::sync::Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn distribution(&self, context: &[Token]) -> Cow<'_, [f64]> {
        (**self).distribution(context)
    }
}

/// A model that ignores its context.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryModel {
    probs: Vec<f64>,
}

impl StationaryModel {
    pub fn new(probs: Vec<f64>) -> Result<Self, AttributionError> {
        validate_distribution(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }
}

impl TokenModel for StationaryModel {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }
    fn distribution(&self, _context: &[Token]) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.probs)
    }
}

pub(crate) fn validate_distribution(probs: &[f64]) -> Result<(), AttributionError> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(AttributionError::InvalidDistribution(sum));
    }
    Ok(())
}

/// Character vocabulary shared by a set of models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, Token>,
}

impl Vocabulary {
    /// Sorted set of the characters appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set)
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as Token))
            .collect();
        Self { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<Token>, AttributionError> {
        text.chars()
            .map(|c| {
                self.index
                    .get(&c)
                    .copied()
                    .ok_or(AttributionError::UnknownCharacter(c))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.chars.get(t as usize).copied().unwrap_or('\u{FFFD}'))
            .collect()
    }
}

/// Character n-gram model with add-k smoothing.
///
/// The context of a token is the `order - 1` tokens before it, padded with
/// a start marker at the beginning of a sequence. Distributions are
/// precomputed for every context seen in training; unseen contexts get the
/// uniform distribution (the add-k estimate with zero counts).
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    smoothing: f64,
    vocab: Vocabulary,
    table: HashMap<u64, Box<[f64]>>,
    uniform: Box<[f64]>,
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_key(&self, context: &[Token]) -> u64 {
        let base = self.vocab.len() as u64 + 1;
        let h = self.order - 1;
        let start = context.len().saturating_sub(h);
        let window = &context[start..];
        // left-pad with the start marker (0)
        let mut key = 0u64;
        for i in 0..h {
            let slot = i as isize - (h - window.len()) as isize;
            let digit = if slot < 0 {
                0
            } else {
                window[slot as usize] as u64 + 1
            };
            key = key * base + digit;
        }
        key
    }
}

impl TokenModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn distribution(&self, context: &[Token]) -> Cow<'_, [f64]> {
        match self.table.get(&self.context_key(context)) {
            Some(d) => Cow::Borrowed(d),
            None => Cow::Borrowed(&self.uniform),
        }
    }
}

/// Trains a character n-gram model whose vocabulary is the corpus alphabet.
pub fn train_token_model(
    corpus: &str,
    order: usize,
    smoothing: f64,
) -> Result<NgramModel, AttributionError> {
    let vocab = Vocabulary::from_texts([corpus]);
    train_with_vocabulary(corpus, vocab, order, smoothing)
}

/// Trains over an explicit vocabulary, so that several models can score
/// each other's outputs.
pub fn train_with_vocabulary(
    corpus: &str,
    vocab: Vocabulary,
    order: usize,
    smoothing: f64,
) -> Result<NgramModel, AttributionError> {
    if corpus.is_empty() {
        return Err(AttributionError::EmptyCorpus);
    }
    if order == 0 {
        return Err(AttributionError::InvalidModel("order must be at least 1".into()));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(AttributionError::InvalidModel(format!(
            "smoothing must be positive, got {smoothing}"
        )));
    }
    let base = vocab.len() as f64 + 1.0;
    if base.powi(order as i32 - 1) >= 2f64.powi(63) {
        return Err(AttributionError::InvalidModel(format!(
            "order {order} is too large for a vocabulary of {}",
            vocab.len()
        )));
    }
    let tokens = vocab.encode(corpus)?;
    let v = vocab.len();
    let mut model = NgramModel {
        order,
        smoothing,
        uniform: vec![1.0 / v as f64; v].into_boxed_slice(),
        vocab,
        table: HashMap::new(),
    };
    let mut counts: HashMap<u64, Vec<f64>> = HashMap::new();
    for i in 0..tokens.len() {
        let key = model.context_key(&tokens[..i]);
        counts.entry(key).or_insert_with(|| vec![0.0; v])[tokens[i] as usize] += 1.0;
    }
    model.table = counts
        .into_iter()
        .map(|(key, c)| {
            let total: f64 = c.iter().sum();
            let denom = total + smoothing * v as f64;
            let dist: Box<[f64]> = c.iter().map(|n| (n + smoothing) / denom).collect();
            (key, dist)
        })
        .collect();
    Ok(model)
}

/// Temperature and nucleus truncation applied when sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), AttributionError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(AttributionError::InvalidSampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(AttributionError::InvalidSampling(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

fn tempered(dist: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return dist.to_vec();
    }
    let logs: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Draws one token: temper, keep the smallest descending-probability prefix
/// (ties by token id) with mass at least `top_p`, renormalise, sample.
pub fn sample_next(dist: &[f64], params: &SamplingParams, rng: &mut Rng) -> Token {
    let probs = tempered(dist, params.temperature);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        if probs[i] <= 0.0 {
            break;
        }
        mass += probs[i];
        kept += 1;
        if mass >= params.top_p {
            break;
        }
    }
    let kept = kept.max(1);
    let mut u = rng.gen::<f64>() * mass;
    for &i in &order[..kept] {
        u -= probs[i];
        if u < 0.0 {
            return i as Token;
        }
    }
    order[kept - 1] as Token
}

/// A sampled continuation and its log-probability under the generating
/// model's untempered distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<Token>,
    pub log_prob: f64,
}

impl Generation {
    pub fn mean_log_prob(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

pub fn generate<M: TokenModel + ?Sized>(
    model: &M,
    prompt: &[Token],
    length: usize,
    params: &SamplingParams,
    rng: &mut Rng,
) -> Generation {
    let mut context = prompt.to_vec();
    let mut log_prob = 0.0;
    for _ in 0..length {
        let dist = model.distribution(&context);
        let tok = sample_next(&dist, params, rng);
        log_prob += dist[tok as usize].ln();
        context.push(tok);
    }
    Generation {
        tokens: context.split_off(prompt.len()),
        log_prob,
    }
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode<M: TokenModel + ?Sized>(model: &M, prompt: &[Token], length: usize) -> Vec<Token> {
    let mut context = prompt.to_vec();
    for _ in 0..length {
        let dist = model.distribution(&context);
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = i;
            }
        }
        context.push(best as Token);
    }
    context.split_off(prompt.len())
}
