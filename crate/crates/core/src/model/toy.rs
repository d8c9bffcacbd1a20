//! Seeded toy recognizer.
//!
//! Each audio frame carries one latent token (frame `j` of an utterance is
//! the `j`-th transcript token's embedding plus acoustic jitter). The encoder
//! is a fixed orthogonal projection applied frame by frame. The decoder keeps
//! a frame pointer derived from its context: every emitted token advances it
//! by one, except a repeat of the previous emitted token produced while an
//! insertion event was active, which does not consume audio. Events are
//! seeded by frame content, so the pointer can be replayed from the context
//! alone.
//!
//! At each step the logits start from `ln(confusion[latent])` and receive a
//! Gumbel perturbation keyed to the frame, so the greedy pick is a sample
//! from the confusion row. Two seeded noise events may then promote a wrong
//! token to `max + EVENT_MARGIN`: end-of-sequence (premature stop, i.e.
//! deletions) or the previous token (insertion). Tokens that occur anywhere
//! in the forced prompt text get `+beta`.
//!
//! The kNN tap is the latent token's embedding plus Gaussian noise keyed to
//! the frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AsrModel, AudioSegment, EncodeResult, ModelError, StepOutput, TokenId};
use crate::index::{squared_l2, VectorKey};
use crate::seed::{hash_f32s, mix, rng, unit_f64};

pub const START: TokenId = 0;
pub const EOS: TokenId = 1;
/// First ordinary (non-special) token id.
pub const FIRST_REGULAR: TokenId = 2;

/// Logit lead given to the token promoted by a deletion or insertion event.
pub const EVENT_MARGIN: f64 = 1.0;

// Probability floor inside ln(confusion); keeps logits finite.
const PROB_FLOOR: f64 = 1e-12;

// Stream tags for seed derivation.
const TAG_EMBED: u64 = 1;
const TAG_PROJ: u64 = 2;
const TAG_GUMBEL: u64 = 3;
const TAG_DEL: u64 = 4;
const TAG_INS: u64 = 5;
const TAG_TAP: u64 = 6;
const TAG_END: u64 = 7;
const TAG_PAIRS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Row-major `vocab_size x vocab_size`, each row sums to one.
    pub confusion: Vec<f64>,
    /// Std-dev of the Gaussian noise on kNN taps.
    pub noise_sigma: f64,
    pub prefix_bias_beta: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub rng_seed: u64,
    pub frame_duration_s: f64,
}

impl ToyModelConfig {
    /// Noiseless model: identity confusion, no events, no prompt bias.
    pub fn new(vocab_size: usize, embed_dim: usize, rng_seed: u64) -> Self {
        Self {
            vocab_size,
            embed_dim,
            confusion: identity(vocab_size),
            noise_sigma: 0.0,
            prefix_bias_beta: 0.0,
            del_rate: 0.0,
            ins_rate: 0.0,
            rng_seed,
            frame_duration_s: 0.02,
        }
    }

    /// Pairs up the ordinary tokens at random (seeded) and moves `mass` of
    /// each row onto the partner. Special tokens keep identity rows.
    pub fn with_confusable_pairs(mut self, mass: f64) -> Self {
        let v = self.vocab_size;
        let mut confusion = identity(v);
        for (a, b) in confusable_pairs(v, self.rng_seed) {
            let (a, b) = (a as usize, b as usize);
            confusion[a * v + a] = 1.0 - mass;
            confusion[a * v + b] = mass;
            confusion[b * v + b] = 1.0 - mass;
            confusion[b * v + a] = mass;
        }
        self.confusion = confusion;
        self
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn with_prefix_bias(mut self, beta: f64) -> Self {
        self.prefix_bias_beta = beta;
        self
    }

    pub fn with_rates(mut self, del_rate: f64, ins_rate: f64) -> Self {
        self.del_rate = del_rate;
        self.ins_rate = ins_rate;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let v = self.vocab_size;
        if v <= FIRST_REGULAR as usize {
            return bad(format!("vocab_size {v} leaves no ordinary tokens"));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.confusion.len() != v * v {
            return bad(format!(
                "confusion has {} entries, expected {}",
                self.confusion.len(),
                v * v
            ));
        }
        for (r, row) in self.confusion.chunks_exact(v).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return bad(format!("confusion row {r} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("confusion row {r} sums to {sum}"));
            }
        }
        for (name, rate) in [("del_rate", self.del_rate), ("ins_rate", self.ins_rate)] {
            if !(0.0..0.5).contains(&rate) {
                return bad(format!("{name} must lie in [0, 0.5), got {rate}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.prefix_bias_beta >= 0.0 && self.prefix_bias_beta.is_finite()) {
            return bad(format!("prefix_bias_beta must be >= 0, got {}", self.prefix_bias_beta));
        }
        if !(self.frame_duration_s > 0.0) {
            return bad("frame_duration_s must be positive".into());
        }
        Ok(())
    }
}

fn identity(v: usize) -> Vec<f64> {
    let mut m = vec![0.0; v * v];
    for i in 0..v {
        m[i * v + i] = 1.0;
    }
    m
}

/// The seeded pairing used by [`ToyModelConfig::with_confusable_pairs`].
pub fn confusable_pairs(vocab_size: usize, seed: u64) -> Vec<(TokenId, TokenId)> {
    let mut tokens: Vec<TokenId> = (FIRST_REGULAR..vocab_size as TokenId).collect();
    let mut r = rng(mix(&[seed, TAG_PAIRS]));
    // Fisher-Yates
    for i in (1..tokens.len()).rev() {
        let j = r.random_range(0..=i);
        tokens.swap(i, j);
    }
    tokens.chunks_exact(2).map(|p| (p[0], p[1])).collect()
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    cfg: ToyModelConfig,
    embeddings: Vec<f32>,
    projection: Vec<f32>,
    projected_vocab: Vec<f32>,
    log_confusion: Vec<f64>,
    tap_noise: Option<Normal<f64>>,
}

impl ToyModel {
    pub fn new(cfg: ToyModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (v, d) = (cfg.vocab_size, cfg.embed_dim);
        let scale = 1.0 / (d as f64).sqrt();
        let normal = Normal::new(0.0, scale).expect("positive scale");

        let mut r = rng(mix(&[cfg.rng_seed, TAG_EMBED]));
        let embeddings: Vec<f32> = (0..v * d).map(|_| normal.sample(&mut r) as f32).collect();

        let mut r = rng(mix(&[cfg.rng_seed, TAG_PROJ]));
        let gaussian: Vec<f64> = (0..d * d).map(|_| normal.sample(&mut r)).collect();
        let projection = orthonormal_rows(gaussian, d);

        let mut model = Self {
            log_confusion: cfg.confusion.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect(),
            tap_noise: (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("validated sigma")),
            cfg,
            embeddings,
            projection,
            projected_vocab: Vec::new(),
        };
        let mut projected = vec![0.0f32; v * d];
        for t in 0..v {
            model.project(
                &model.embeddings[t * d..(t + 1) * d],
                &mut projected[t * d..(t + 1) * d],
            );
        }
        model.projected_vocab = projected;
        Ok(model)
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    /// Raw (pre-encoder) embedding of a token; synthetic audio frames are
    /// built from these.
    pub fn token_embedding(&self, token: TokenId) -> &[f32] {
        let d = self.cfg.embed_dim;
        let t = token as usize;
        &self.embeddings[t * d..(t + 1) * d]
    }

    fn project(&self, frame: &[f32], out: &mut [f32]) {
        let d = self.cfg.embed_dim;
        for (row, o) in self.projection.chunks_exact(d).zip(out.iter_mut()) {
            *o = row
                .iter()
                .zip(frame)
                .map(|(&w, &x)| f64::from(w) * f64::from(x))
                .sum::<f64>() as f32;
        }
    }

    /// Ordinary token whose encoded embedding is nearest to `encoded_frame`.
    pub fn latent_token(&self, encoded_frame: &[f32]) -> TokenId {
        let d = self.cfg.embed_dim;
        let mut best = (f64::INFINITY, FIRST_REGULAR);
        for t in FIRST_REGULAR as usize..self.cfg.vocab_size {
            let dist = squared_l2(encoded_frame, &self.projected_vocab[t * d..(t + 1) * d]);
            if dist < best.0 {
                best = (dist, t as TokenId);
            }
        }
        best.1
    }

    fn step(
        &self,
        encoded: &EncodeResult,
        pointer: usize,
        repeats: usize,
        prev_free: Option<TokenId>,
        prefix: &[TokenId],
    ) -> StepOutput {
        let v = self.cfg.vocab_size;
        let in_audio = pointer < encoded.valid_frame_count;
        let key = self.frame_key(encoded, pointer);
        let latent = if in_audio {
            self.latent_token(encoded.frame(pointer))
        } else {
            EOS
        };

        let row = latent as usize * v;
        let mut logits = self.log_confusion[row..row + v].to_vec();

        if in_audio {
            let mut r = rng(mix(&[key, TAG_GUMBEL]));
            for l in &mut logits {
                let u: f64 = r.random::<f64>().max(f64::MIN_POSITIVE);
                *l -= (-u.ln()).ln();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if self.deletion_fires(key, repeats) {
                logits[EOS as usize] = max + EVENT_MARGIN;
            } else if let Some(prev) = prev_free {
                if self.insertion_fires(key, repeats) {
                    logits[prev as usize] = max + EVENT_MARGIN;
                }
            }
        }

        if self.cfg.prefix_bias_beta > 0.0 && !prefix.is_empty() {
            let mut boosted = vec![false; v];
            for &t in prefix {
                boosted[t as usize] = true;
            }
            for (l, b) in logits.iter_mut().zip(boosted) {
                if b {
                    *l += self.cfg.prefix_bias_beta;
                }
            }
        }

        let mut tap: Vec<f32> = self.token_embedding(latent).to_vec();
        if let Some(noise) = &self.tap_noise {
            let mut r = rng(mix(&[key, TAG_TAP]));
            for x in &mut tap {
                *x = (f64::from(*x) + noise.sample(&mut r)) as f32;
            }
        }

        StepOutput {
            logits,
            knn_query: VectorKey(tap),
        }
    }

    /// Seed for everything drawn at frame `pointer`; past the end of the
    /// audio it is keyed to the last frame.
    fn frame_key(&self, encoded: &EncodeResult, pointer: usize) -> u64 {
        let seed = self.cfg.rng_seed;
        if pointer < encoded.valid_frame_count {
            mix(&[seed, hash_f32s(encoded.frame(pointer))])
        } else {
            let tail = encoded
                .valid_frame_count
                .checked_sub(1)
                .map(|i| hash_f32s(encoded.frame(i)))
                .unwrap_or(0);
            mix(&[seed, TAG_END, tail])
        }
    }

    fn deletion_fires(&self, key: u64, repeats: usize) -> bool {
        unit_f64(mix(&[key, repeats as u64, TAG_DEL])) < self.cfg.del_rate
    }

    // Deletion takes precedence, so an insertion only fires without one.
    fn insertion_fires(&self, key: u64, repeats: usize) -> bool {
        !self.deletion_fires(key, repeats) && unit_f64(mix(&[key, repeats as u64, TAG_INS])) < self.cfg.ins_rate
    }

    /// Frame pointer after emitting `free` from `start`, plus how many
    /// insertions have been emitted at that frame.
    fn align_free(&self, encoded: &EncodeResult, start: usize, free: &[TokenId]) -> (usize, usize) {
        let mut pointer = start;
        let mut repeats = 0;
        let mut prev = None;
        for &t in free {
            let inserted = prev == Some(t)
                && pointer < encoded.valid_frame_count
                && self.insertion_fires(self.frame_key(encoded, pointer), repeats);
            if inserted {
                repeats += 1;
            } else {
                pointer += 1;
                repeats = 0;
            }
            prev = Some(t);
        }
        (pointer, repeats)
    }

    fn check_encoded(&self, encoded: &EncodeResult) -> Result<(), ModelError> {
        if encoded.dim != self.cfg.embed_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.cfg.embed_dim,
                actual: encoded.dim,
            });
        }
        Ok(())
    }
}

// Gram-Schmidt on the rows of a d x d Gaussian matrix.
fn orthonormal_rows(mut m: Vec<f64>, d: usize) -> Vec<f32> {
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|c| m[i * d + c] * m[j * d + c]).sum();
            for c in 0..d {
                m[i * d + c] -= dot * m[j * d + c];
            }
        }
        let norm = (0..d).map(|c| m[i * d + c].powi(2)).sum::<f64>().sqrt();
        for c in 0..d {
            m[i * d + c] /= norm;
        }
    }
    m.into_iter().map(|x| x as f32).collect()
}

impl AsrModel for ToyModel {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn encoder_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn tap_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn start_token(&self) -> TokenId {
        START
    }

    fn eos_token(&self) -> TokenId {
        EOS
    }

    fn encode(&self, audio: &AudioSegment) -> Result<EncodeResult, ModelError> {
        if audio.num_frames() == 0 {
            return Err(ModelError::EmptyAudio(audio.utterance_id.clone()));
        }
        if audio.dim != self.cfg.embed_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.cfg.embed_dim,
                actual: audio.dim,
            });
        }
        let d = audio.dim;
        let mut out = vec![0.0f32; audio.frames.len()];
        for (frame, o) in audio.frames.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.project(frame, o);
        }
        Ok(EncodeResult {
            utterance_id: audio.utterance_id.clone(),
            dim: d,
            frame_embeddings: out,
            valid_frame_count: audio.num_frames(),
        })
    }

    fn decode_step(
        &self,
        encoded: &EncodeResult,
        context: &[TokenId],
        forced_prefix_len: usize,
    ) -> Result<StepOutput, ModelError> {
        self.check_encoded(encoded)?;
        if context.first() != Some(&START) {
            return Err(ModelError::MalformedContext(
                "context must begin with the start token".into(),
            ));
        }
        if 1 + forced_prefix_len > context.len() {
            return Err(ModelError::MalformedContext(format!(
                "forced prefix of {forced_prefix_len} tokens exceeds context of {}",
                context.len()
            )));
        }
        if let Some(&bad) = context.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(ModelError::MalformedContext(format!(
                "token {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        let prefix = &context[1..1 + forced_prefix_len];
        let free = &context[1 + forced_prefix_len..];
        let (pointer, repeats) = self.align_free(encoded, forced_prefix_len, free);
        Ok(self.step(encoded, pointer, repeats, free.last().copied(), prefix))
    }

    fn teacher_force(&self, encoded: &EncodeResult, targets: &[TokenId]) -> Result<Vec<StepOutput>, ModelError> {
        self.check_encoded(encoded)?;
        if targets.is_empty() || targets.len() != encoded.valid_frame_count + 1 {
            return Err(ModelError::LengthMismatch {
                id: encoded.utterance_id.clone(),
                targets: targets.len(),
                frames: encoded.valid_frame_count,
            });
        }
        Ok((0..targets.len())
            .map(|i| {
                let history = &targets[..i];
                let (pointer, repeats) = self.align_free(encoded, 0, history);
                self.step(encoded, pointer, repeats, history.last().copied(), &[])
            })
            .collect())
    }
}
