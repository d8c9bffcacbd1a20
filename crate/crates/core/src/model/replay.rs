//! A model that answers from activations exported by an external recognizer.
//!
//! Encoding returns the stored encoder frames unchanged (the imported audio
//! segments already *are* those frames). Teacher forcing returns the stored
//! taps for the exported transcript. Free decoding is only possible along
//! the exported ground-truth path and only when logits were exported.

use std::collections::HashMap;

use super::{AsrModel, AudioSegment, EncodeResult, ModelError, StepOutput, TokenId};
use crate::storage::ExportRecord;

#[derive(Debug, Clone, Default)]
pub struct ReplayModel {
    records: HashMap<String, ExportRecord>,
    vocab_size: usize,
    encoder_dim: usize,
    tap_dim: usize,
    start_token: TokenId,
    eos_token: TokenId,
}

impl ReplayModel {
    /// `records` are assumed mutually consistent; [`crate::storage::read_exports`]
    /// guarantees that. An empty set yields a model with zero dimensions.
    pub fn new(records: Vec<ExportRecord>) -> Self {
        let (vocab_size, encoder_dim, tap_dim, start_token, eos_token) = records
            .first()
            .map(|r| (r.vocab_size, r.encoder_dim, r.tap_dim, r.start_token, r.eos_token))
            .unwrap_or_default();
        Self {
            records: records.into_iter().map(|r| (r.utterance_id.clone(), r)).collect(),
            vocab_size,
            encoder_dim,
            tap_dim,
            start_token,
            eos_token,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, utterance_id: &str) -> Option<&ExportRecord> {
        self.records.get(utterance_id)
    }

    fn lookup(&self, id: &str) -> Result<&ExportRecord, ModelError> {
        self.records
            .get(id)
            .ok_or_else(|| ModelError::UnknownUtterance(id.to_owned()))
    }

    fn output(&self, rec: &ExportRecord, step: usize) -> StepOutput {
        let logits = match &rec.logits {
            Some(l) => l[step * rec.vocab_size..(step + 1) * rec.vocab_size]
                .iter()
                .map(|&x| f64::from(x))
                .collect(),
            None => vec![0.0; rec.vocab_size],
        };
        StepOutput {
            logits,
            knn_query: rec.taps[step * rec.tap_dim..(step + 1) * rec.tap_dim].to_vec().into(),
        }
    }
}

impl AsrModel for ReplayModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn encoder_dim(&self) -> usize {
        self.encoder_dim
    }

    fn tap_dim(&self) -> usize {
        self.tap_dim
    }

    fn start_token(&self) -> TokenId {
        self.start_token
    }

    fn eos_token(&self) -> TokenId {
        self.eos_token
    }

    fn encode(&self, audio: &AudioSegment) -> Result<EncodeResult, ModelError> {
        if audio.dim != self.encoder_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.encoder_dim,
                actual: audio.dim,
            });
        }
        if audio.num_frames() == 0 {
            return Err(ModelError::EmptyAudio(audio.utterance_id.clone()));
        }
        Ok(EncodeResult {
            utterance_id: audio.utterance_id.clone(),
            dim: audio.dim,
            frame_embeddings: audio.frames.clone(),
            valid_frame_count: audio.num_frames(),
        })
    }

    fn decode_step(
        &self,
        encoded: &EncodeResult,
        context: &[TokenId],
        forced_prefix_len: usize,
    ) -> Result<StepOutput, ModelError> {
        let rec = self.lookup(&encoded.utterance_id)?;
        if context.first() != Some(&self.start_token) {
            return Err(ModelError::MalformedContext(
                "context must begin with the start token".into(),
            ));
        }
        if forced_prefix_len > 0 {
            return Err(ModelError::Unsupported("prompted decoding of replayed activations"));
        }
        if rec.logits.is_none() {
            return Err(ModelError::Unsupported("decoding a record exported without logits"));
        }
        let history = &context[1..];
        if history.len() >= rec.tokens.len() || rec.tokens[..history.len()] != *history {
            return Err(ModelError::Unsupported("decoding off the exported ground-truth path"));
        }
        Ok(self.output(rec, history.len()))
    }

    fn teacher_force(&self, encoded: &EncodeResult, targets: &[TokenId]) -> Result<Vec<StepOutput>, ModelError> {
        let rec = self.lookup(&encoded.utterance_id)?;
        if targets.len() != rec.tokens.len() {
            return Err(ModelError::LengthMismatch {
                id: rec.utterance_id.clone(),
                targets: targets.len(),
                frames: rec.tokens.len(),
            });
        }
        if targets != rec.tokens.as_slice() {
            return Err(ModelError::MalformedContext(format!(
                "targets differ from the exported transcript of `{}`",
                rec.utterance_id
            )));
        }
        Ok((0..rec.tokens.len()).map(|i| self.output(rec, i)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(with_logits: bool) -> ExportRecord {
        ExportRecord {
            utterance_id: "u1".into(),
            text: "ab".into(),
            frame_duration_s: 0.02,
            start_token: 0,
            eos_token: 1,
            vocab_size: 4,
            encoder_dim: 2,
            tap_dim: 3,
            tokens: vec![2, 3, 1],
            frames: vec![0.1, 0.2, 0.3, 0.4],
            taps: (0..9).map(|x| x as f32).collect(),
            logits: with_logits.then(|| (0..12).map(|x| x as f32).collect()),
        }
    }

    #[test]
    fn teacher_force_replays_taps() {
        let m = ReplayModel::new(vec![record(false)]);
        let audio = AudioSegment::new("u1", 2, vec![0.1, 0.2, 0.3, 0.4], 0.02).unwrap();
        let enc = m.encode(&audio).unwrap();
        assert_eq!(enc.frame_embeddings, audio.frames);
        let out = m.teacher_force(&enc, &[2, 3, 1]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].knn_query.as_slice(), &[3.0, 4.0, 5.0]);
        assert!(matches!(
            m.teacher_force(&enc, &[2, 1]),
            Err(ModelError::LengthMismatch { .. })
        ));
        assert!(m.teacher_force(&enc, &[3, 3, 1]).is_err());
    }

    #[test]
    fn decode_step_follows_ground_truth_only() {
        let audio = AudioSegment::new("u1", 2, vec![0.1, 0.2, 0.3, 0.4], 0.02).unwrap();
        let no_logits = ReplayModel::new(vec![record(false)]);
        let enc = no_logits.encode(&audio).unwrap();
        assert!(matches!(
            no_logits.decode_step(&enc, &[0], 0),
            Err(ModelError::Unsupported(_))
        ));
        let m = ReplayModel::new(vec![record(true)]);
        assert_eq!(
            m.decode_step(&enc, &[0, 2], 0).unwrap().logits,
            vec![4.0, 5.0, 6.0, 7.0]
        );
        assert!(m.decode_step(&enc, &[0, 3], 0).is_err());
    }

    #[test]
    fn unknown_utterance() {
        let m = ReplayModel::new(vec![record(false)]);
        let audio = AudioSegment::new("zz", 2, vec![0.0, 0.0], 0.02).unwrap();
        let enc = m.encode(&audio).unwrap();
        assert_eq!(
            m.teacher_force(&enc, &[1]).unwrap_err(),
            ModelError::UnknownUtterance("zz".into())
        );
    }
}
