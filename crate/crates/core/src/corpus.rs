//! Labelled utterances and audio lookup.

use std::collections::HashMap;

use crate::model::{AudioSegment, TokenId};

/// Reference text of an utterance: token ids for the decoder plus display
/// text for character-level scoring.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

impl Transcript {
    pub fn new(tokens: Vec<TokenId>, text: impl Into<String>) -> Self {
        Self {
            tokens,
            text: text.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub audio: AudioSegment,
    pub transcript: Transcript,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.audio.utterance_id
    }
}

/// Resolves a prompt's audio reference to its samples.
pub trait AudioSource: Sync {
    fn audio(&self, audio_ref: &str) -> Option<&AudioSegment>;
}

/// An ordered set of utterances with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        let by_id = utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id().to_owned(), i))
            .collect();
        Self { utterances, by_id }
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.by_id.get(id).map(|&i| &self.utterances[i])
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Longest transcript in tokens.
    pub fn max_transcript_len(&self) -> usize {
        self.utterances.iter().map(|u| u.transcript.len()).max().unwrap_or(0)
    }
}

impl AudioSource for Corpus {
    fn audio(&self, audio_ref: &str) -> Option<&AudioSegment> {
        self.get(audio_ref).map(|u| &u.audio)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.utterances.iter()
    }
}
