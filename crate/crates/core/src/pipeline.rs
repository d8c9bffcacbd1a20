//! Retrieval-augmented greedy decoding.
//!
//! Pre-processing picks prompt utterances for the test audio and fixes a
//! [`PromptPlan`]; their audio is prepended to the test audio and their
//! transcripts are forced into the decoder context. Post-processing mixes a
//! kNN distribution into the model's next-token distribution at every free
//! step. The four [`Mode`]s switch each stage on or off.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AudioSource, Utterance};
use crate::knn::{interpolate, knn_distribution, Distribution, KnnError, KnnParams, TokenDatastore};
use crate::model::{softmax, AsrModel, AudioSegment, ModelError, TokenId};
use crate::sentence::{pack_prompts, retrieve_prompts, FailurePolicy, PromptPlan, SentenceDatastore, SentenceError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("mode {0} needs a token datastore")]
    MissingTokenStore(Mode),

    #[error("mode {0} needs a sentence datastore")]
    MissingSentenceStore(Mode),

    #[error("mode {0} does not use prompts but the plan has {1}")]
    UnexpectedPrompts(Mode, usize),

    #[error("prompt plan violates its budget: {prompts} prompts, {total_s} s with the test audio")]
    BudgetViolation { prompts: usize, total_s: f64 },

    #[error("no audio for prompt `{0}`")]
    MissingPromptAudio(String),

    #[error("invalid decode configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Knn(#[from] KnnError),

    #[error(transparent)]
    Sentence(#[from] SentenceError),

    #[error("utterance `{id}`: {source}")]
    Utterance { id: String, source: Box<PipelineError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    KnnOnly,
    IclOnly,
    M2r,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::KnnOnly, Mode::IclOnly, Mode::M2r];

    pub fn uses_knn(self) -> bool {
        matches!(self, Mode::KnnOnly | Mode::M2r)
    }

    pub fn uses_icl(self) -> bool {
        matches!(self, Mode::IclOnly | Mode::M2r)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::KnnOnly => "knn_only",
            Mode::IclOnly => "icl_only",
            Mode::M2r => "m2r",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PipelineError::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub mode: Mode,
    pub knn: KnnParams,
    pub n_max: usize,
    pub audio_budget_s: f64,
    pub k_sentence: usize,
    /// Cap on free decoding steps, end-of-sequence included.
    pub max_decode_len: usize,
    /// Drop the test utterance itself from its prompt candidates.
    pub exclude_self: bool,
    pub on_error: FailurePolicy,
    /// Decode utterances on the rayon pool.
    pub parallel: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::M2r,
            knn: KnnParams::default(),
            n_max: 10,
            audio_budget_s: 30.0,
            k_sentence: 16,
            max_decode_len: 256,
            exclude_self: false,
            on_error: FailurePolicy::Abort,
            parallel: false,
        }
    }
}

impl DecodeConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Sets `max_decode_len` to twice the longest transcript in `corpus`.
    pub fn bounded_by<'a>(mut self, corpus: impl IntoIterator<Item = &'a Utterance>) -> Self {
        let longest = corpus.into_iter().map(|u| u.transcript.len()).max().unwrap_or(0);
        self.max_decode_len = (2 * longest).max(1);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.knn.validate()?;
        if self.max_decode_len == 0 {
            return Err(PipelineError::InvalidConfig("max_decode_len must be >= 1".into()));
        }
        if self.k_sentence == 0 {
            return Err(PipelineError::InvalidConfig("k_sentence must be >= 1".into()));
        }
        if !(self.audio_budget_s > 0.0) {
            return Err(PipelineError::InvalidConfig("audio budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub utterance_id: String,
    /// Free-decoded tokens; prompt text and the end-of-sequence token are
    /// not included.
    pub hypothesis: Vec<TokenId>,
    pub wall_time_s: f64,
    /// Duration of the test audio alone; the real-time factor is measured
    /// against the audio being transcribed.
    pub audio_duration_s: f64,
    pub prompt_audio_s: f64,
    pub n_prompts_used: usize,
}

/// Greedy decoding of `audio` under `plan`.
pub fn decode_greedy<M, A>(
    model: &M,
    audio: &AudioSegment,
    plan: &PromptPlan,
    prompt_audio: &A,
    store: Option<&TokenDatastore>,
    config: &DecodeConfig,
) -> Result<DecodeResult, PipelineError>
where
    M: AsrModel + ?Sized,
    A: AudioSource + ?Sized,
{
    let mode = config.mode;
    let store = match (mode.uses_knn(), store) {
        (true, None) => return Err(PipelineError::MissingTokenStore(mode)),
        (true, Some(s)) => Some(s),
        (false, _) => None,
    };
    if !mode.uses_icl() && !plan.is_empty() {
        return Err(PipelineError::UnexpectedPrompts(mode, plan.len()));
    }
    let test_s = audio.duration_s();
    if !plan.fits(test_s, config.audio_budget_s, config.n_max) {
        return Err(PipelineError::BudgetViolation {
            prompts: plan.len(),
            total_s: plan.total_prompt_duration_s + test_s,
        });
    }

    let started = Instant::now();

    let encoded = if plan.is_empty() {
        model.encode(audio)?
    } else {
        let mut parts = Vec::with_capacity(plan.len() + 1);
        for p in &plan.prompts {
            parts.push(
                prompt_audio
                    .audio(p.audio_ref())
                    .ok_or_else(|| PipelineError::MissingPromptAudio(p.utterance_id.clone()))?,
            );
        }
        parts.push(audio);
        model.encode(&AudioSegment::concat(audio.utterance_id.clone(), &parts)?)?
    };

    let forced = plan.prefix_tokens.len();
    let mut context = Vec::with_capacity(1 + forced + config.max_decode_len);
    context.push(model.start_token());
    context.extend_from_slice(&plan.prefix_tokens);
    let eos = model.eos_token();

    for _ in 0..config.max_decode_len {
        let step = model.decode_step(&encoded, &context, forced)?;
        let p_model = Distribution::new_unchecked(softmax(&step.logits));
        let next = match store {
            Some(store) => {
                let p_knn = knn_distribution(store, step.knn_query.as_slice(), &config.knn)?;
                interpolate(&p_model, &p_knn, config.knn.lambda)?.argmax()
            }
            None => p_model.argmax(),
        };
        if next == eos {
            break;
        }
        context.push(next);
    }

    let wall_time_s = started.elapsed().as_secs_f64().max(1e-9);
    Ok(DecodeResult {
        utterance_id: audio.utterance_id.clone(),
        hypothesis: context.split_off(1 + forced),
        wall_time_s,
        audio_duration_s: test_s,
        prompt_audio_s: plan.total_prompt_duration_s,
        n_prompts_used: plan.len(),
    })
}

/// Retrieves and packs prompts for one test utterance according to `config`.
pub fn plan_prompts<M: AsrModel + ?Sized>(
    model: &M,
    audio: &AudioSegment,
    sentence_store: Option<&SentenceDatastore>,
    config: &DecodeConfig,
) -> Result<PromptPlan, PipelineError> {
    if !config.mode.uses_icl() || config.n_max == 0 {
        return Ok(PromptPlan::empty());
    }
    let store = sentence_store.ok_or(PipelineError::MissingSentenceStore(config.mode))?;
    let exclude = config.exclude_self.then_some(audio.utterance_id.as_str());
    let candidates = retrieve_prompts(model, store, audio, config.k_sentence, exclude)?;
    Ok(pack_prompts(
        candidates,
        audio.duration_s(),
        config.audio_budget_s,
        config.n_max,
    )?)
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    /// Successful results, in input order.
    pub results: Vec<DecodeResult>,
    /// `(utterance id, error)` for utterances skipped under
    /// [`FailurePolicy::Skip`].
    pub failures: Vec<(String, String)>,
}

/// Plans and decodes every test utterance. Output order follows input order
/// whether or not decoding runs in parallel.
pub fn run_batch<M, A>(
    model: &M,
    test_set: &[Utterance],
    sentence_store: Option<&SentenceDatastore>,
    prompt_audio: &A,
    token_store: Option<&TokenDatastore>,
    config: &DecodeConfig,
) -> Result<BatchOutput, PipelineError>
where
    M: AsrModel + ?Sized,
    A: AudioSource + ?Sized,
{
    config.validate()?;
    let mode = config.mode;
    if mode.uses_knn() && token_store.is_none() {
        return Err(PipelineError::MissingTokenStore(mode));
    }
    if mode.uses_icl() && config.n_max > 0 && sentence_store.is_none() {
        return Err(PipelineError::MissingSentenceStore(mode));
    }

    let one = |utt: &Utterance| -> Result<DecodeResult, PipelineError> {
        let plan = plan_prompts(model, &utt.audio, sentence_store, config)?;
        decode_greedy(model, &utt.audio, &plan, prompt_audio, token_store, config)
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<DecodeResult, PipelineError>> = if config.parallel {
        test_set.par_iter().map(one).collect()
    } else {
        test_set.iter().map(one).collect()
    };
    // Without the `parallel` feature the flag is accepted and ignored.
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<DecodeResult, PipelineError>> = test_set.iter().map(one).collect();

    let mut out = BatchOutput::default();
    for (utt, outcome) in test_set.iter().zip(outcomes) {
        match outcome {
            Ok(r) => out.results.push(r),
            Err(e) if config.on_error == FailurePolicy::Skip => {
                out.failures.push((utt.id().to_owned(), e.to_string()));
            }
            Err(e) => {
                return Err(PipelineError::Utterance {
                    id: utt.id().to_owned(),
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}
