//! A mock arena for replaying the target-model attack end to end.
//!
//! Every battle samples two distinct models (proportionally to static
//! sampling weights), samples a prompt, generates both outputs with top-p
//! sampling and collects a vote. The vote comes from the attacker when one
//! is configured and active for the battle, otherwise from an honest but
//! noisy voter. The attacker sees only the two outputs: it traces each one
//! under the target model, runs attribution, and upvotes the side that is
//! attributed to the target.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use thiserror::Error;

use crate::attribution::corpus::{synthetic_corpus, CorpusSpec};
use crate::attribution::{
    attribute, generate, trace_from_model, train_with_vocabulary, AttributionError,
    AttributionParams, SamplingParams, SequenceTrace, Token, TokenModel, Vocabulary,
};
use crate::config::{ConfigError, KeyValues};
use crate::prefdata::{logistic, DataError, ModelId, PreferenceDataset, PreferenceRecord, Provenance, VoteLabel};
use crate::seed::{self, Rng};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("arena needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("duplicate model `{0}`")]
    DuplicateModel(String),
    #[error("model `{model}`: sampling weight must be positive and finite, got {weight}")]
    InvalidWeight { model: String, weight: f64 },
    #[error("model `{model}` has vocabulary size {found}, expected {expected}")]
    VocabularyMismatch {
        model: String,
        found: usize,
        expected: usize,
    },
    #[error("attacker target `{0}` is not in the roster")]
    UnknownTarget(String),
    #[error("attacker rate must lie in [0, 1], got {0}")]
    InvalidAttackerRate(f64),
    #[error("honest epsilon must lie in [0, 0.5], got {0}")]
    InvalidEpsilon(f64),
    #[error("generation length must be at least 1")]
    EmptyGeneration,
    #[error("battle count must be at least 1")]
    NoBattles,
    #[error("unknown {what} `{value}`")]
    UnknownOption { what: &'static str, value: String },
    #[error("model `{model}`: {message}")]
    Corpus { model: String, message: String },
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// What the attacker does when it cannot single out one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    Tie,
    Abstain,
    Random,
}

impl FromStr for Fallback {
    type Err = ArenaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tie" => Ok(Fallback::Tie),
            "abstain" => Ok(Fallback::Abstain),
            "random" => Ok(Fallback::Random),
            other => Err(ArenaError::UnknownOption {
                what: "fallback",
                value: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackerConfig {
    pub target: ModelId,
    pub params: AttributionParams,
    pub fallback: Fallback,
    /// Probability that a given battle is voted on by the attacker.
    pub rate: f64,
}

/// How honest voters decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HonestMode {
    /// The output with the higher mean log-probability under its own
    /// generating model wins.
    SelfLogProb,
    /// Left wins with probability `sigma(q_left - q_right)` using each
    /// model's latent quality.
    Latent,
}

impl FromStr for HonestMode {
    type Err = ArenaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logprob" => Ok(HonestMode::SelfLogProb),
            "latent" => Ok(HonestMode::Latent),
            other => Err(ArenaError::UnknownOption {
                what: "honest mode",
                value: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HonestVoter {
    /// Probability that a decided vote is flipped.
    pub epsilon: f64,
    pub mode: HonestMode,
}

impl Default for HonestVoter {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            mode: HonestMode::SelfLogProb,
        }
    }
}

#[derive(Clone)]
pub struct ArenaModel {
    pub id: ModelId,
    pub model: Arc<dyn TokenModel>,
    pub weight: f64,
    /// Latent quality used by [`HonestMode::Latent`].
    pub quality: f64,
}

impl ArenaModel {
    pub fn new(id: ModelId, model: Arc<dyn TokenModel>) -> Self {
        Self {
            id,
            model,
            weight: 1.0,
            quality: 0.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_quality(mut self, quality: f64) -> Self {
        self.quality = quality;
        self
    }
}

impl std::fmt::Debug for ArenaModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArenaModel")
            .field("id", &self.id)
            .field("weight", &self.weight)
            .field("quality", &self.quality)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct ArenaConfig {
    pub models: Vec<ArenaModel>,
    pub attacker: Option<AttackerConfig>,
    pub honest: HonestVoter,
    /// Prompt pool; one is drawn uniformly per battle.
    pub prompts: Vec<Vec<Token>>,
    pub generation_length: usize,
    pub sampling: SamplingParams,
    /// Used to store prompt and response text on records when present.
    pub vocabulary: Option<Vocabulary>,
    pub seed: u64,
}

impl ArenaConfig {
    /// Config with no attacker, an empty prompt, 64-token generations and
    /// top-p 0.9 sampling.
    pub fn new(models: Vec<ArenaModel>) -> Self {
        Self {
            models,
            attacker: None,
            honest: HonestVoter::default(),
            prompts: vec![Vec::new()],
            generation_length: 64,
            sampling: SamplingParams::default(),
            vocabulary: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        if self.models.len() < 2 {
            return Err(ArenaError::TooFewModels(self.models.len()));
        }
        let vocab = self.models[0].model.vocab_size();
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.id == m.id) {
                return Err(ArenaError::DuplicateModel(m.id.to_string()));
            }
            if !(m.weight > 0.0 && m.weight.is_finite()) {
                return Err(ArenaError::InvalidWeight {
                    model: m.id.to_string(),
                    weight: m.weight,
                });
            }
            if m.model.vocab_size() != vocab {
                return Err(ArenaError::VocabularyMismatch {
                    model: m.id.to_string(),
                    found: m.model.vocab_size(),
                    expected: vocab,
                });
            }
        }
        if let Some(att) = &self.attacker {
            if self.index_of(&att.target).is_none() {
                return Err(ArenaError::UnknownTarget(att.target.to_string()));
            }
            if !(0.0..=1.0).contains(&att.rate) {
                return Err(ArenaError::InvalidAttackerRate(att.rate));
            }
        }
        if !(0.0..=0.5).contains(&self.honest.epsilon) {
            return Err(ArenaError::InvalidEpsilon(self.honest.epsilon));
        }
        if self.generation_length == 0 {
            return Err(ArenaError::EmptyGeneration);
        }
        self.sampling.validate()?;
        if self.prompts.is_empty() {
            return Err(ArenaError::UnknownOption {
                what: "prompt pool",
                value: "(empty)".into(),
            });
        }
        if let Some(&token) = self.prompts.iter().flatten().find(|&&t| t as usize >= vocab) {
            return Err(AttributionError::TokenOutOfVocabulary { token, vocab }.into());
        }
        Ok(())
    }

    pub fn index_of(&self, id: &ModelId) -> Option<usize> {
        self.models.iter().position(|m| &m.id == id)
    }

    pub fn roster(&self) -> Vec<ModelId> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    fn weights(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.weight).collect()
    }

    /// Reads an arena configuration. Relative corpus paths resolve against
    /// `base_dir`.
    ///
    /// Keys: `models.<id>.corpus` (path) or `models.<id>.synthetic` (corpus
    /// seed), `models.<id>.weight`, `.order`, `.smoothing`, `.quality`;
    /// `attacker.target`, `attacker.p`, `attacker.t`, `attacker.fallback`,
    /// `attacker.rate`; `honest.epsilon`, `honest.mode`;
    /// `generation.length`, `generation.top_p`, `generation.temperature`;
    /// `corpus.length`; `prompt.<name>`; `seed`.
    pub fn from_key_values(kv: &KeyValues, base_dir: &Path) -> Result<Self, ArenaError> {
        const MODEL_FIELDS: [&str; 6] = ["corpus", "synthetic", "weight", "order", "smoothing", "quality"];
        const TOP: [&str; 12] = [
            "attacker.target",
            "attacker.p",
            "attacker.t",
            "attacker.fallback",
            "attacker.rate",
            "honest.epsilon",
            "honest.mode",
            "generation.length",
            "generation.top_p",
            "generation.temperature",
            "corpus.length",
            "seed",
        ];
        kv.check_keys(|k| {
            TOP.contains(&k)
                || k.strip_prefix("prompt.").is_some_and(|r| !r.is_empty())
                || k.strip_prefix("models.")
                    .and_then(|r| r.rsplit_once('.'))
                    .is_some_and(|(_, f)| MODEL_FIELDS.contains(&f))
        })?;

        let corpus_spec = CorpusSpec {
            length: kv.parsed_or("corpus.length", CorpusSpec::default().length)?,
            ..CorpusSpec::default()
        };
        let names = kv.groups("models");
        let mut corpora = Vec::with_capacity(names.len());
        for name in &names {
            let corpus = match (
                kv.get(&format!("models.{name}.corpus")),
                kv.parsed::<u64>(&format!("models.{name}.synthetic"))?,
            ) {
                (Some(path), None) => {
                    let full = base_dir.join(path);
                    std::fs::read_to_string(&full).map_err(|e| ArenaError::Corpus {
                        model: name.clone(),
                        message: format!("{}: {e}", full.display()),
                    })?
                }
                (None, Some(seed)) => synthetic_corpus(&corpus_spec, seed),
                _ => {
                    return Err(ArenaError::Corpus {
                        model: name.clone(),
                        message: "set exactly one of `corpus` or `synthetic`".into(),
                    })
                }
            };
            corpora.push(corpus);
        }
        let prompts_text = kv.leaves("prompt");
        let vocab = Vocabulary::from_chars(
            corpora
                .iter()
                .map(String::as_str)
                .chain(prompts_text.iter().map(|(_, v)| v.as_str()))
                .flat_map(str::chars)
                .chain(corpus_spec.alphabet.iter().copied()),
        );

        let mut models = Vec::with_capacity(names.len());
        for (name, corpus) in names.iter().zip(&corpora) {
            let field = |f: &str| format!("models.{name}.{f}");
            let order = kv.parsed_or(&field("order"), 3usize)?;
            let smoothing = kv.parsed_or(&field("smoothing"), 0.01)?;
            let model = train_with_vocabulary(corpus, vocab.clone(), order, smoothing).map_err(
                |e| ArenaError::Corpus {
                    model: name.clone(),
                    message: e.to_string(),
                },
            )?;
            models.push(ArenaModel {
                id: ModelId::new(name.as_str())?,
                model: Arc::new(model),
                weight: kv.parsed_or(&field("weight"), 1.0)?,
                quality: kv.parsed_or(&field("quality"), 0.0)?,
            });
        }

        let attacker = match kv.get("attacker.target") {
            None => None,
            Some(target) => Some(AttackerConfig {
                target: ModelId::new(target)?,
                params: AttributionParams::new(
                    kv.parsed_or("attacker.p", 0.9)?,
                    kv.parsed_or("attacker.t", 0.8)?,
                )?,
                fallback: kv.get("attacker.fallback").unwrap_or("tie").parse()?,
                rate: kv.parsed_or("attacker.rate", 1.0)?,
            }),
        };
        let mut prompts: Vec<Vec<Token>> = prompts_text
            .iter()
            .map(|(_, text)| vocab.encode(text))
            .collect::<Result<_, _>>()?;
        if prompts.is_empty() {
            prompts.push(Vec::new());
        }
        let config = Self {
            models,
            attacker,
            honest: HonestVoter {
                epsilon: kv.parsed_or("honest.epsilon", 0.0)?,
                mode: kv.get("honest.mode").unwrap_or("logprob").parse()?,
            },
            prompts,
            generation_length: kv.parsed_or("generation.length", 64)?,
            sampling: SamplingParams {
                temperature: kv.parsed_or("generation.temperature", 1.0)?,
                top_p: kv.parsed_or("generation.top_p", 0.9)?,
            },
            vocabulary: Some(vocab),
            seed: kv.parsed_or("seed", 0)?,
        };
        config.validate()?;
        Ok(config)
    }
}

fn weighted_index(weights: &[f64], exclude: Option<usize>, rng: &mut Rng) -> usize {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, w)| w)
        .sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = i;
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    last
}

/// Two distinct indices, each drawn proportionally to the remaining weights.
pub fn draw_pair(weights: &[f64], rng: &mut Rng) -> (usize, usize) {
    let first = weighted_index(weights, None, rng);
    let second = weighted_index(weights, Some(first), rng);
    (first, second)
}

/// Samples a (left, right) pair for one battle.
pub fn sample_pair(config: &ArenaConfig, seed: u64) -> Result<(ModelId, ModelId), ArenaError> {
    config.validate()?;
    let (a, b) = draw_pair(&config.weights(), &mut seed::rng(seed));
    Ok((config.models[a].id.clone(), config.models[b].id.clone()))
}

/// Exact probability that model `i` is in a drawn pair.
pub fn pair_inclusion_probability(weights: &[f64], i: usize) -> f64 {
    let total: f64 = weights.iter().sum();
    let first = weights[i] / total;
    let second: f64 = weights
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &w)| (w / total) * (weights[i] / (total - w)))
        .sum();
    first + second
}

/// The attacker's reading of one battle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackerDecision {
    /// `None` means abstain.
    pub vote: Option<VoteLabel>,
    pub left_flagged: bool,
    pub right_flagged: bool,
}

/// Runs attribution against the target model on both outputs and votes for
/// the one side attributed to it; otherwise applies `fallback`.
pub fn attacker_vote<M: TokenModel + ?Sized>(
    prompt: &[Token],
    left: &[Token],
    right: &[Token],
    detector: &M,
    params: &AttributionParams,
    fallback: Fallback,
    rng: &mut Rng,
) -> Result<AttackerDecision, AttributionError> {
    let l = attribute(&trace_from_model(detector, prompt, left)?, params).decision;
    let r = attribute(&trace_from_model(detector, prompt, right)?, params).decision;
    let vote = match (l, r) {
        (true, false) => Some(VoteLabel::LeftWins),
        (false, true) => Some(VoteLabel::RightWins),
        _ => match fallback {
            Fallback::Tie => Some(VoteLabel::Tie),
            Fallback::Abstain => None,
            Fallback::Random => Some(if rng.gen_bool(0.5) {
                VoteLabel::LeftWins
            } else {
                VoteLabel::RightWins
            }),
        },
    };
    Ok(AttackerDecision {
        vote,
        left_flagged: l,
        right_flagged: r,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackerStats {
    /// Battles the attacker voted on (or abstained from).
    pub battles_seen: usize,
    /// Of those, battles where the target was one of the two models.
    pub target_appearances: usize,
    pub votes_cast_for_target: usize,
    /// Non-target outputs the detector attributed to the target.
    pub detector_false_fires: usize,
    pub abstentions: usize,
}

impl AttackerStats {
    pub fn render(&self) -> String {
        format!(
            "battles_seen = {}\ntarget_appearances = {}\nvotes_cast_for_target = {}\ndetector_false_fires = {}\nabstentions = {}\n",
            self.battles_seen,
            self.target_appearances,
            self.votes_cast_for_target,
            self.detector_false_fires,
            self.abstentions
        )
    }
}

#[derive(Debug, Clone)]
pub struct ArenaOutcome {
    pub battles: PreferenceDataset,
    pub attacker_stats: AttackerStats,
    /// Battles simulated, including abstentions.
    pub battles_run: usize,
}

fn honest_vote(
    honest: &HonestVoter,
    left: (&ArenaModel, f64),
    right: (&ArenaModel, f64),
    rng: &mut Rng,
) -> VoteLabel {
    let label = match honest.mode {
        HonestMode::SelfLogProb => match left.1.total_cmp(&right.1) {
            std::cmp::Ordering::Greater => VoteLabel::LeftWins,
            std::cmp::Ordering::Less => VoteLabel::RightWins,
            std::cmp::Ordering::Equal => VoteLabel::Tie,
        },
        HonestMode::Latent => {
            if rng.gen::<f64>() < logistic(left.0.quality - right.0.quality) {
                VoteLabel::LeftWins
            } else {
                VoteLabel::RightWins
            }
        }
    };
    if label != VoteLabel::Tie && rng.gen::<f64>() < honest.epsilon {
        label.swapped()
    } else {
        label
    }
}

/// Simulates `n_battles` battles. Battle `b` draws all of its randomness
/// from the seed derived from `(seed, b)`.
pub fn run_arena(config: &ArenaConfig, n_battles: usize, seed: u64) -> Result<ArenaOutcome, ArenaError> {
    config.validate()?;
    if n_battles == 0 {
        return Err(ArenaError::NoBattles);
    }
    let weights = config.weights();
    let attacker = config
        .attacker
        .as_ref()
        .map(|a| (a, config.index_of(&a.target).expect("validated")));
    let mut stats = AttackerStats::default();
    let mut records = Vec::with_capacity(n_battles);
    for b in 0..n_battles {
        let mut rng = seed::rng(seed::derive(seed, b as u64));
        let (li, ri) = draw_pair(&weights, &mut rng);
        let prompt = &config.prompts[rng.gen_range(0..config.prompts.len())];
        let (lm, rm) = (&config.models[li], &config.models[ri]);
        let lg = generate(&*lm.model, prompt, config.generation_length, &config.sampling, &mut rng);
        let rg = generate(&*rm.model, prompt, config.generation_length, &config.sampling, &mut rng);

        let active = attacker.filter(|(a, _)| rng.gen_bool(a.rate));
        let (label, provenance) = match active {
            Some((att, ti)) => {
                stats.battles_seen += 1;
                if li == ti || ri == ti {
                    stats.target_appearances += 1;
                }
                let detector = &config.models[ti].model;
                let d = attacker_vote(
                    prompt,
                    &lg.tokens,
                    &rg.tokens,
                    &**detector,
                    &att.params,
                    att.fallback,
                    &mut rng,
                )?;
                stats.detector_false_fires +=
                    usize::from(d.left_flagged && li != ti) + usize::from(d.right_flagged && ri != ti);
                let winner = match d.vote {
                    Some(VoteLabel::LeftWins) => Some(li),
                    Some(VoteLabel::RightWins) => Some(ri),
                    _ => None,
                };
                if winner == Some(ti) {
                    stats.votes_cast_for_target += 1;
                }
                match d.vote {
                    Some(label) => (label, Provenance::Adversarial),
                    None => {
                        stats.abstentions += 1;
                        continue;
                    }
                }
            }
            None => (
                honest_vote(
                    &config.honest,
                    (lm, lg.mean_log_prob()),
                    (rm, rg.mean_log_prob()),
                    &mut rng,
                ),
                Provenance::Organic,
            ),
        };
        let mut rec = PreferenceRecord::new(lm.id.clone(), rm.id.clone(), label);
        rec.provenance = provenance;
        if let Some(vocab) = &config.vocabulary {
            rec.prompt = Some(vocab.decode(prompt));
            rec.responses = Some((vocab.decode(&lg.tokens), vocab.decode(&rg.tokens)));
        }
        records.push(rec);
    }
    Ok(ArenaOutcome {
        battles: PreferenceDataset::new(config.roster(), records)?,
        attacker_stats: stats,
        battles_run: n_battles,
    })
}

/// Samples `per_model` outputs from every arena model and traces each one
/// under `target`'s model, labelled with its true source. Used to measure
/// detector quality for the configured roster.
pub fn detector_traces(
    config: &ArenaConfig,
    target: &ModelId,
    per_model: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<SequenceTrace>, ArenaError> {
    config.validate()?;
    let ti = config
        .index_of(target)
        .ok_or_else(|| ArenaError::UnknownTarget(target.to_string()))?;
    if length == 0 {
        return Err(ArenaError::EmptyGeneration);
    }
    let detector = &config.models[ti].model;
    let mut traces = Vec::with_capacity(per_model * config.models.len());
    for (mi, m) in config.models.iter().enumerate() {
        for s in 0..per_model {
            let mut rng = seed::rng(seed::derive(seed::derive(seed, mi as u64), s as u64));
            let prompt = &config.prompts[rng.gen_range(0..config.prompts.len())];
            let g = generate(&*m.model, prompt, length, &config.sampling, &mut rng);
            let trace = trace_from_model(&**detector, prompt, &g.tokens)?;
            traces.push(trace.with_source(Some(m.id.clone())));
        }
    }
    Ok(traces)
}
