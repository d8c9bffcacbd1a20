//! Token-level kNN retrieval.
//!
//! The datastore maps decoder activations captured under teacher forcing to
//! the ground-truth token at that position. While decoding, the current
//! activation retrieves its `k` nearest keys; their labels are weighted by
//! `exp(-d / tau)` (squared L2 `d`) and summed per vocabulary unit. The
//! resulting distribution is mixed linearly with the model's own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Utterance;
use crate::index::{FlatIndex, IndexError, Neighbor};
use crate::model::{AsrModel, ModelError, TokenId};
use crate::sentence::{Built, FailurePolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnnError {
    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("token datastore is empty")]
    EmptyStore,

    #[error("utterance `{id}`: {source}")]
    Model { id: String, source: ModelError },

    #[error("utterance `{id}`: model returned {steps} steps for {targets} targets")]
    StepCountMismatch { id: String, steps: usize, targets: usize },

    #[error("token {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },

    #[error("distribution sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("invalid kNN parameters: {0}")]
    InvalidParams(String),

    #[error("not a probability distribution: {0}")]
    InvalidDistribution(String),

    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps `probs` after checking non-negativity and unit sum (1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self, KnnError> {
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(KnnError::InvalidDistribution(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KnnError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable unit; the lowest id wins ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub tau: f64,
    pub lambda: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 16,
            tau: 1.0,
            lambda: 0.3,
        }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<(), KnnError> {
        if self.k == 0 {
            return Err(KnnError::InvalidParams("k must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(KnnError::InvalidParams(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(KnnError::InvalidParams(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDatastore {
    index: FlatIndex,
    values: Vec<TokenId>,
    vocab_size: usize,
}

impl TokenDatastore {
    pub fn new(dim: usize, vocab_size: usize) -> Result<Self, KnnError> {
        Ok(Self {
            index: FlatIndex::new(dim)?,
            values: Vec::new(),
            vocab_size,
        })
    }

    pub fn from_parts(index: FlatIndex, values: Vec<TokenId>, vocab_size: usize) -> Result<Self, KnnError> {
        if index.len() != values.len() {
            return Err(KnnError::SizeMismatch(index.len(), values.len()));
        }
        if let Some(&token) = values.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(KnnError::TokenOutOfRange { token, vocab_size });
        }
        Ok(Self {
            index,
            values,
            vocab_size,
        })
    }

    /// Appends aligned keys and labels.
    pub fn extend<K: AsRef<[f32]>>(&mut self, keys: &[K], values: &[TokenId]) -> Result<(), KnnError> {
        if keys.len() != values.len() {
            return Err(KnnError::SizeMismatch(keys.len(), values.len()));
        }
        if let Some(&token) = values.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(KnnError::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            });
        }
        self.index.insert_batch(keys)?;
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn values(&self) -> &[TokenId] {
        &self.values
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Nearest entries with their labels.
    pub fn neighbors(&self, query: &[f32], k: usize) -> Result<Vec<(Neighbor, TokenId)>, KnnError> {
        if self.is_empty() {
            return Err(KnnError::EmptyStore);
        }
        Ok(self
            .index
            .query_topk(query, k)?
            .into_iter()
            .map(|n| (n, self.values[n.id]))
            .collect())
    }
}

/// Teacher-forces every utterance and stores one (tap, token) pair per
/// target position. Targets are the transcript followed by end-of-sequence;
/// the start token is never a target.
///
/// A model that returns the wrong number of steps aborts the build no
/// matter the policy; other per-utterance model errors follow `policy`.
pub fn build_token_datastore<M: AsrModel + ?Sized>(
    model: &M,
    corpus: &[Utterance],
    policy: FailurePolicy,
) -> Result<Built<TokenDatastore>, KnnError> {
    if corpus.is_empty() {
        return Err(KnnError::EmptyCorpus);
    }
    let mut store = TokenDatastore::new(model.tap_dim(), model.vocab_size())?;
    let mut skipped = Vec::new();
    for utt in corpus {
        let id = utt.id().to_owned();
        let mut targets = utt.transcript.tokens.clone();
        targets.push(model.eos_token());
        let steps = model
            .encode(&utt.audio)
            .and_then(|enc| model.teacher_force(&enc, &targets));
        let steps = match steps {
            Ok(steps) => steps,
            Err(source @ ModelError::LengthMismatch { .. }) => {
                return Err(KnnError::Model { id, source });
            }
            Err(source) if policy == FailurePolicy::Skip => {
                skipped.push((id, source.to_string()));
                continue;
            }
            Err(source) => return Err(KnnError::Model { id, source }),
        };
        if steps.len() != targets.len() {
            return Err(KnnError::StepCountMismatch {
                id,
                steps: steps.len(),
                targets: targets.len(),
            });
        }
        let keys: Vec<&[f32]> = steps.iter().map(|s| s.knn_query.as_slice()).collect();
        store.extend(&keys, &targets)?;
    }
    if store.is_empty() {
        return Err(KnnError::EmptyCorpus);
    }
    Ok(Built { store, skipped })
}

/// Aggregates labelled neighbour distances into a distribution over
/// `vocab_size` units. Weights are `exp(-(d - d_min) / tau)`; subtracting
/// the minimum leaves the normalized result unchanged.
pub fn aggregate_neighbors(labelled: &[(TokenId, f64)], vocab_size: usize, tau: f64) -> Result<Distribution, KnnError> {
    if labelled.is_empty() {
        return Err(KnnError::EmptyStore);
    }
    if !(tau > 0.0) {
        return Err(KnnError::InvalidParams(format!("tau must be > 0, got {tau}")));
    }
    let d_min = labelled.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let mut probs = vec![0.0; vocab_size];
    let mut total = 0.0;
    for &(token, d) in labelled {
        let slot = probs
            .get_mut(token as usize)
            .ok_or(KnnError::TokenOutOfRange { token, vocab_size })?;
        let w = (-(d - d_min) / tau).exp();
        *slot += w;
        total += w;
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(Distribution::new_unchecked(probs))
}

/// kNN distribution for one decoder activation.
pub fn knn_distribution(store: &TokenDatastore, query: &[f32], params: &KnnParams) -> Result<Distribution, KnnError> {
    params.validate()?;
    let labelled: Vec<(TokenId, f64)> = store
        .neighbors(query, params.k)?
        .into_iter()
        .map(|(n, t)| (t, n.distance))
        .collect();
    aggregate_neighbors(&labelled, store.vocab_size(), params.tau)
}

/// `lambda * p_knn + (1 - lambda) * p_model`, entry-wise.
pub fn interpolate(p_model: &Distribution, p_knn: &Distribution, lambda: f64) -> Result<Distribution, KnnError> {
    if p_model.len() != p_knn.len() {
        return Err(KnnError::SizeMismatch(p_model.len(), p_knn.len()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(KnnError::InvalidParams(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(Distribution::new_unchecked(
        p_model
            .0
            .iter()
            .zip(&p_knn.0)
            .map(|(&m, &k)| lambda * k + (1.0 - lambda) * m)
            .collect(),
    ))
}
