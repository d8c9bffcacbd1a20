//! Sentence-level prompt retrieval.
//!
//! Every training utterance is keyed by the mean of its valid encoder
//! frames. At test time the same pooled embedding of the test audio
//! retrieves the closest utterances, which are then packed, most similar
//! first, into a prompt plan that respects the model's audio window and a
//! prompt-count cap.

use thiserror::Error;

use crate::corpus::{Transcript, Utterance};
use crate::index::{FlatIndex, IndexError, VectorKey};
use crate::model::{AsrModel, AudioSegment, ModelError, TokenId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SentenceError {
    #[error("cannot pool an empty frame sequence")]
    EmptyFrames,

    #[error("frame {index} has dimension {actual}, expected {expected}")]
    RaggedFrames {
        index: usize,
        expected: usize,
        actual: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("utterance `{0}` has an empty transcript")]
    EmptyTranscript(String),

    #[error("utterance `{id}`: {source}")]
    Model { id: String, source: ModelError },

    #[error("sentence datastore is empty")]
    EmptyStore,

    #[error("test utterance lasts {test_s} s, beyond the {budget_s} s audio budget")]
    TestExceedsBudget { test_s: f64, budget_s: f64 },

    #[error("entry `{id}` has non-positive duration {duration_s}")]
    BadDuration { id: String, duration_s: f64 },

    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Component-wise mean of the given frames, accumulated in `f64`.
pub fn pool_mean<'a, I>(frames: I) -> Result<VectorKey, SentenceError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut iter = frames.into_iter();
    let first = iter.next().ok_or(SentenceError::EmptyFrames)?;
    let mut sum: Vec<f64> = first.iter().map(|&x| f64::from(x)).collect();
    let mut count = 1usize;
    for frame in iter {
        if frame.len() != sum.len() {
            return Err(SentenceError::RaggedFrames {
                index: count,
                expected: sum.len(),
                actual: frame.len(),
            });
        }
        for (s, &x) in sum.iter_mut().zip(frame) {
            *s += f64::from(x);
        }
        count += 1;
    }
    let n = count as f64;
    Ok(VectorKey(sum.into_iter().map(|s| (s / n) as f32).collect()))
}

/// Pooled encoder embedding of an utterance, the sentence-level key.
pub fn sentence_key<M: AsrModel + ?Sized>(model: &M, audio: &AudioSegment) -> Result<VectorKey, SentenceError> {
    let encoded = model.encode(audio).map_err(|source| SentenceError::Model {
        id: audio.utterance_id.clone(),
        source,
    })?;
    pool_mean(encoded.valid_frames())
}

/// One retrievable prompt. The audio reference is the utterance id,
/// resolved through an [`AudioSource`](crate::corpus::AudioSource).
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEntry {
    pub utterance_id: String,
    pub transcript: Transcript,
    pub duration_s: f64,
}

impl SentenceEntry {
    pub fn new(
        utterance_id: impl Into<String>,
        transcript: Transcript,
        duration_s: f64,
    ) -> Result<Self, SentenceError> {
        let utterance_id = utterance_id.into();
        if transcript.is_empty() {
            return Err(SentenceError::EmptyTranscript(utterance_id));
        }
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(SentenceError::BadDuration {
                id: utterance_id,
                duration_s,
            });
        }
        Ok(Self {
            utterance_id,
            transcript,
            duration_s,
        })
    }

    pub fn audio_ref(&self) -> &str {
        &self.utterance_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Leave the utterance out and record it in the build report.
    Skip,
}

/// A built datastore together with the utterances that were left out.
#[derive(Debug, Clone)]
pub struct Built<T> {
    pub store: T,
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceDatastore {
    index: FlatIndex,
    entries: Vec<SentenceEntry>,
}

impl SentenceDatastore {
    pub fn new(dim: usize) -> Result<Self, SentenceError> {
        Ok(Self {
            index: FlatIndex::new(dim)?,
            entries: Vec::new(),
        })
    }

    /// Assembles a store from parts, e.g. after loading from disk.
    pub fn from_parts(index: FlatIndex, entries: Vec<SentenceEntry>) -> Result<Self, SentenceError> {
        if index.len() != entries.len() {
            return Err(SentenceError::Index(IndexError::DimensionMismatch {
                expected: index.len(),
                actual: entries.len(),
            }));
        }
        Ok(Self { index, entries })
    }

    pub fn push(&mut self, key: &VectorKey, entry: SentenceEntry) -> Result<usize, SentenceError> {
        let id = self.index.insert_batch(&[key])?[0];
        self.entries.push(entry);
        Ok(id)
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn entries(&self) -> &[SentenceEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top `k` entries for a pooled query key. Entries whose id equals
    /// `exclude_id` are removed before ranking.
    pub fn retrieve_by_key(
        &self,
        key: &[f32],
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<&SentenceEntry>, SentenceError> {
        if self.is_empty() {
            return Err(SentenceError::EmptyStore);
        }
        let excluded = exclude_id
            .map(|id| self.entries.iter().filter(|e| e.utterance_id == id).count())
            .unwrap_or(0);
        if excluded == self.len() {
            return Ok(Vec::new());
        }
        let hits = self.index.query_topk(key, k + excluded)?;
        Ok(hits
            .into_iter()
            .map(|h| &self.entries[h.id])
            .filter(|e| Some(e.utterance_id.as_str()) != exclude_id)
            .take(k)
            .collect())
    }
}

/// Builds the sentence datastore: one pooled key per utterance.
pub fn build_sentence_datastore<M: AsrModel + ?Sized>(
    model: &M,
    corpus: &[Utterance],
    policy: FailurePolicy,
) -> Result<Built<SentenceDatastore>, SentenceError> {
    if corpus.is_empty() {
        return Err(SentenceError::EmptyCorpus);
    }
    let mut store = SentenceDatastore::new(model.encoder_dim())?;
    let mut skipped = Vec::new();
    for utt in corpus {
        let entry = SentenceEntry::new(utt.id(), utt.transcript.clone(), utt.audio.duration_s());
        let result = entry.and_then(|entry| Ok((sentence_key(model, &utt.audio)?, entry)));
        match result {
            Ok((key, entry)) => {
                store.push(&key, entry)?;
            }
            Err(err) if policy == FailurePolicy::Skip => {
                skipped.push((utt.id().to_owned(), err.to_string()));
            }
            Err(err) => return Err(err),
        }
    }
    if store.is_empty() {
        return Err(SentenceError::EmptyCorpus);
    }
    Ok(Built { store, skipped })
}

/// Top-`k` prompt candidates for `audio`, most similar first.
pub fn retrieve_prompts<'s, M: AsrModel + ?Sized>(
    model: &M,
    store: &'s SentenceDatastore,
    audio: &AudioSegment,
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<&'s SentenceEntry>, SentenceError> {
    if store.is_empty() {
        return Err(SentenceError::EmptyStore);
    }
    let key = sentence_key(model, audio)?;
    store.retrieve_by_key(key.as_slice(), k, exclude_id)
}

/// Prompts chosen for one test utterance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptPlan {
    pub prompts: Vec<SentenceEntry>,
    pub total_prompt_duration_s: f64,
    /// Concatenated prompt transcripts, in prompt order.
    pub prefix_tokens: Vec<TokenId>,
}

impl PromptPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// True when the plan plus the test audio fits both limits.
    pub fn fits(&self, test_duration_s: f64, audio_budget_s: f64, n_max: usize) -> bool {
        self.prompts.len() <= n_max && self.total_prompt_duration_s + test_duration_s <= audio_budget_s
    }
}

/// Greedy skip-and-continue packing: walk the candidates in order and keep
/// each one that still fits the remaining audio budget, until `n_max` are
/// kept. Candidates that do not fit are dropped; later, shorter ones may
/// still be taken.
pub fn pack_prompts<'a, I>(
    candidates: I,
    test_duration_s: f64,
    audio_budget_s: f64,
    n_max: usize,
) -> Result<PromptPlan, SentenceError>
where
    I: IntoIterator<Item = &'a SentenceEntry>,
{
    if test_duration_s > audio_budget_s || !test_duration_s.is_finite() {
        return Err(SentenceError::TestExceedsBudget {
            test_s: test_duration_s,
            budget_s: audio_budget_s,
        });
    }
    let mut plan = PromptPlan::empty();
    for cand in candidates {
        if plan.prompts.len() >= n_max {
            break;
        }
        if !(cand.duration_s > 0.0 && cand.duration_s.is_finite()) {
            return Err(SentenceError::BadDuration {
                id: cand.utterance_id.clone(),
                duration_s: cand.duration_s,
            });
        }
        let total = plan.total_prompt_duration_s + cand.duration_s;
        if total + test_duration_s <= audio_budget_s {
            plan.total_prompt_duration_s = total;
            plan.prefix_tokens.extend_from_slice(&cand.transcript.tokens);
            plan.prompts.push(cand.clone());
        }
    }
    Ok(plan)
}
