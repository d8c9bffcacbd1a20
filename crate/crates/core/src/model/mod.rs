//! The contract an encoder-decoder ASR model has to meet to be driven by
//! the retrieval pipeline, plus two implementations: a seeded toy model used
//! for every desk-scale experiment and a replay model backed by exported
//! activations of a real model.

mod replay;
mod toy;

pub use replay::ReplayModel;
pub use toy::{confusable_pairs, ToyModel, ToyModelConfig, EOS, EVENT_MARGIN, FIRST_REGULAR, START};

use thiserror::Error;

use crate::index::VectorKey;

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("audio segment `{0}` has no frames")]
    EmptyAudio(String),

    #[error("frame dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed decoder context: {0}")]
    MalformedContext(String),

    #[error("utterance `{id}`: {targets} target positions do not align with {frames} frames")]
    LengthMismatch { id: String, targets: usize, frames: usize },

    #[error("no stored activations for utterance `{0}`")]
    UnknownUtterance(String),

    #[error("operation not supported by this model: {0}")]
    Unsupported(&'static str),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot concatenate audio with frame durations {0} s and {1} s")]
    FrameRateMismatch(f64, f64),
}

/// Feature frames of one utterance, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub utterance_id: String,
    pub dim: usize,
    pub frames: Vec<f32>,
    /// Seconds covered by one frame.
    pub frame_duration_s: f64,
}

impl AudioSegment {
    pub fn new(
        utterance_id: impl Into<String>,
        dim: usize,
        frames: Vec<f32>,
        frame_duration_s: f64,
    ) -> Result<Self, ModelError> {
        let utterance_id = utterance_id.into();
        if dim == 0 || !frames.len().is_multiple_of(dim) {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                actual: if dim == 0 { 0 } else { frames.len() % dim },
            });
        }
        if !(frame_duration_s > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "frame duration must be positive, got {frame_duration_s}"
            )));
        }
        Ok(Self {
            utterance_id,
            dim,
            frames,
            frame_duration_s,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 * self.frame_duration_s
    }

    /// Joins segments end to end under `utterance_id`. No separator frames
    /// are inserted.
    pub fn concat(utterance_id: impl Into<String>, parts: &[&AudioSegment]) -> Result<Self, ModelError> {
        let first = parts
            .first()
            .ok_or_else(|| ModelError::EmptyAudio("<concatenation>".into()))?;
        let mut frames = Vec::with_capacity(parts.iter().map(|p| p.frames.len()).sum());
        for part in parts {
            if part.dim != first.dim {
                return Err(ModelError::DimensionMismatch {
                    expected: first.dim,
                    actual: part.dim,
                });
            }
            if part.frame_duration_s != first.frame_duration_s {
                return Err(ModelError::FrameRateMismatch(
                    first.frame_duration_s,
                    part.frame_duration_s,
                ));
            }
            frames.extend_from_slice(&part.frames);
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            dim: first.dim,
            frames,
            frame_duration_s: first.frame_duration_s,
        })
    }
}

/// Encoder output for one (possibly concatenated) segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult {
    /// Id of the segment that was encoded; replay models key on it.
    pub utterance_id: String,
    pub dim: usize,
    pub frame_embeddings: Vec<f32>,
    /// Frames past this count are padding and must not be pooled.
    pub valid_frame_count: usize,
}

impl EncodeResult {
    pub fn num_frames(&self) -> usize {
        self.frame_embeddings.len() / self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frame_embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn valid_frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frame_embeddings
            .chunks_exact(self.dim)
            .take(self.valid_frame_count)
    }
}

/// Next-token logits plus the decoder activation used as kNN key/query.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub knn_query: VectorKey,
}

/// An encoder-decoder recognizer as seen by the retrieval pipeline.
///
/// Implementations must be deterministic in their inputs. `context` always
/// starts with [`AsrModel::start_token`]; the `forced_prefix_len` tokens
/// after it are prompt text forced into the decoder, and the remainder is
/// the model's own output so far.
pub trait AsrModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Dimension of encoder frame embeddings (sentence-level keys).
    fn encoder_dim(&self) -> usize;

    /// Dimension of the per-step kNN tap (token-level keys).
    fn tap_dim(&self) -> usize;

    fn start_token(&self) -> TokenId;

    fn eos_token(&self) -> TokenId;

    fn encode(&self, audio: &AudioSegment) -> Result<EncodeResult, ModelError>;

    fn decode_step(
        &self,
        encoded: &EncodeResult,
        context: &[TokenId],
        forced_prefix_len: usize,
    ) -> Result<StepOutput, ModelError>;

    /// One output per entry of `targets`, each conditioned on the
    /// ground-truth history before it. `targets` is the transcript followed
    /// by the end-of-sequence token.
    fn teacher_force(&self, encoded: &EncodeResult, targets: &[TokenId]) -> Result<Vec<StepOutput>, ModelError>;
}

/// Max-subtracted softmax in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1.0, 2.0, -3.0, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!(p[3] > 0.999);
    }

    #[test]
    fn audio_duration_and_concat() {
        let a = AudioSegment::new("a", 2, vec![0.0, 1.0, 2.0, 3.0], 0.02).unwrap();
        let b = AudioSegment::new("b", 2, vec![4.0, 5.0], 0.02).unwrap();
        assert!((a.duration_s() - 0.04).abs() < 1e-12);
        let ab = AudioSegment::concat("ab", &[&a, &b]).unwrap();
        assert_eq!(ab.num_frames(), 3);
        assert_eq!(ab.frame(2), &[4.0, 5.0]);

        let c = AudioSegment::new("c", 2, vec![4.0, 5.0], 0.01).unwrap();
        assert!(matches!(
            AudioSegment::concat("ac", &[&a, &c]),
            Err(ModelError::FrameRateMismatch(..))
        ));
        assert!(AudioSegment::concat("none", &[]).is_err());
    }

    #[test]
    fn audio_rejects_ragged_frames() {
        assert!(AudioSegment::new("x", 3, vec![0.0; 4], 0.02).is_err());
        assert!(AudioSegment::new("x", 2, vec![0.0; 4], 0.0).is_err());
    }
}
