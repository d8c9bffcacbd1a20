//! Seeded synthetic corpora for the toy model.
//!
//! Utterances are drawn from a set of topics. Each topic owns a handful of
//! ordinary tokens and a sparse successor table over them, and an utterance
//! is a walk through that table, so utterances of one topic share both
//! vocabulary and bigrams. Frame `j` of the audio is the toy model's
//! embedding of token `j` plus small Gaussian jitter.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Transcript, Utterance};
use crate::metrics::Vocabulary;
use crate::model::{AudioSegment, ModelError, TokenId, ToyModel, ToyModelConfig};
use crate::seed::{mix, rng};

const TAG_TOPICS: u64 = 101;
const TAG_TRAIN: u64 = 102;
const TAG_TEST: u64 = 103;

/// First code point used to render toy tokens as text (CJK block).
const TEXT_BASE: u32 = 0x4E00;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_topics: usize,
    pub topic_size: usize,
    pub successors: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Std-dev of per-component jitter added to audio frames.
    pub acoustic_sigma: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 2000,
            n_test: 500,
            n_topics: 24,
            topic_size: 8,
            successors: 2,
            min_len: 6,
            max_len: 12,
            acoustic_sigma: 0.02,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self, vocab_size: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        let ordinary = vocab_size.saturating_sub(2);
        if self.n_topics == 0 {
            return bad("n_topics must be >= 1".into());
        }
        if self.topic_size < 2 || self.topic_size > ordinary {
            return bad(format!("topic_size must lie in [2, {ordinary}]"));
        }
        if self.successors == 0 || self.successors >= self.topic_size {
            return bad("successors must lie in [1, topic_size)".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len".into());
        }
        if !(self.acoustic_sigma >= 0.0) {
            return bad("acoustic_sigma must be >= 0".into());
        }
        Ok(())
    }
}

/// Toy model plus disjoint train and test corpora.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub model: ToyModel,
    pub train: Corpus,
    pub test: Corpus,
}

/// The toy-model setup used by the synthetic experiments: 15% of each
/// ordinary token's confusion mass on a partner, 3% deletion and insertion
/// events.
pub fn benchmark_model_config(seed: u64) -> ToyModelConfig {
    ToyModelConfig::new(64, 32, seed)
        .with_confusable_pairs(0.15)
        .with_rates(0.03, 0.03)
        .with_noise(0.1)
        .with_prefix_bias(2.0)
}

struct Topic {
    tokens: Vec<TokenId>,
    // successors[i] lists indices into `tokens`
    successors: Vec<Vec<usize>>,
}

fn make_topics(spec: &CorpusSpec, vocab_size: usize) -> Vec<Topic> {
    let mut r = rng(mix(&[spec.seed, TAG_TOPICS]));
    let ordinary: Vec<TokenId> = (2..vocab_size as TokenId).collect();
    (0..spec.n_topics)
        .map(|_| {
            let tokens = sample_distinct(&mut r, &ordinary, spec.topic_size);
            let successors = (0..tokens.len())
                .map(|i| {
                    let others: Vec<usize> = (0..tokens.len()).filter(|&j| j != i).collect();
                    sample_distinct(&mut r, &others, spec.successors)
                })
                .collect();
            Topic { tokens, successors }
        })
        .collect()
}

fn sample_distinct<T: Copy, R: Rng>(r: &mut R, pool: &[T], n: usize) -> Vec<T> {
    let mut pool = pool.to_vec();
    for i in 0..n {
        let j = r.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool
}

/// Renders toy tokens as one CJK character each.
pub fn token_text(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|&t| char::from_u32(TEXT_BASE + t).expect("valid code point"))
        .collect()
}

/// Vocabulary matching [`token_text`], for character-level scoring.
pub fn toy_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::new((0..vocab_size as TokenId).map(|t| token_text(&[t])).collect())
}

fn make_split(spec: &CorpusSpec, model: &ToyModel, topics: &[Topic], tag: u64, prefix: &str, count: usize) -> Corpus {
    let cfg = model.config();
    let jitter = (spec.acoustic_sigma > 0.0).then(|| Normal::new(0.0, spec.acoustic_sigma).expect("sigma"));
    let utterances = (0..count)
        .map(|i| {
            let mut r = rng(mix(&[spec.seed, tag, i as u64]));
            let topic = &topics[r.random_range(0..topics.len())];
            let len = r.random_range(spec.min_len..=spec.max_len);
            let mut at = r.random_range(0..topic.tokens.len());
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                tokens.push(topic.tokens[at]);
                let next = &topic.successors[at];
                at = next[r.random_range(0..next.len())];
            }
            let mut frames = Vec::with_capacity(len * cfg.embed_dim);
            for &t in &tokens {
                for &x in model.token_embedding(t) {
                    let noise = jitter.as_ref().map_or(0.0, |n| n.sample(&mut r));
                    frames.push((f64::from(x) + noise) as f32);
                }
            }
            let id = format!("{prefix}-{i:05}");
            Utterance {
                audio: AudioSegment::new(id, cfg.embed_dim, frames, cfg.frame_duration_s).expect("well-formed frames"),
                transcript: Transcript::new(tokens.clone(), token_text(&tokens)),
            }
        })
        .collect();
    Corpus::new(utterances)
}

/// Generates train and test corpora for `model`.
pub fn generate(spec: &CorpusSpec, model: ToyModel) -> Result<Benchmark, ModelError> {
    spec.validate(model.config().vocab_size)?;
    let topics = make_topics(spec, model.config().vocab_size);
    let train = make_split(spec, &model, &topics, TAG_TRAIN, "train", spec.n_train);
    let test = make_split(spec, &model, &topics, TAG_TEST, "test", spec.n_test);
    Ok(Benchmark { model, train, test })
}
