use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use super::{cer, levenshtein_align, ErrorCounts, MetricsError, Normalizer};
use crate::corpus::{Corpus, Transcript};
use crate::pipeline::DecodeResult;

/// Id-to-piece table used to render token ids as text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    pieces: Vec<String>,
}

impl Vocabulary {
    pub fn new(pieces: Vec<String>) -> Self {
        Self { pieces }
    }

    /// One piece per line; line `n` (0-based) is token `n`.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(str::to_owned).collect())
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<String, MetricsError> {
        let mut out = String::new();
        for &t in tokens {
            out.push_str(self.pieces.get(t as usize).ok_or(MetricsError::UnknownToken(t))?);
        }
        Ok(out)
    }
}

/// Unit of scoring.
#[derive(Debug, Clone, Default)]
pub enum Scoring {
    /// Compare token ids directly.
    #[default]
    Tokens,
    /// Render the hypothesis with `vocab`, normalize both sides, compare
    /// characters. References use their display text.
    Characters { vocab: Vocabulary, normalizer: Normalizer },
}

impl Scoring {
    fn counts(&self, reference: &Transcript, hyp: &[u32]) -> Result<ErrorCounts, MetricsError> {
        match self {
            Scoring::Tokens => levenshtein_align(&reference.tokens, hyp),
            Scoring::Characters { vocab, normalizer } => {
                let r: Vec<char> = normalizer.apply(&reference.text).chars().collect();
                let h: Vec<char> = normalizer.apply(&vocab.detokenize(hyp)?).chars().collect();
                levenshtein_align(&r, &h)
            }
        }
    }
}

pub trait References {
    fn reference(&self, utterance_id: &str) -> Option<&Transcript>;
}

impl References for Corpus {
    fn reference(&self, utterance_id: &str) -> Option<&Transcript> {
        self.get(utterance_id).map(|u| &u.transcript)
    }
}

impl References for HashMap<String, Transcript> {
    fn reference(&self, utterance_id: &str) -> Option<&Transcript> {
        self.get(utterance_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub counts: ErrorCounts,
    pub wall_time_s: f64,
    pub audio_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub aggregate_counts: ErrorCounts,
    /// Percent.
    pub aggregate_cer: f64,
    /// Total wall time over total audio duration.
    pub rtf: f64,
}

/// Scores every result against its reference and aggregates at corpus level.
pub fn build_report<R: References + ?Sized>(
    results: &[DecodeResult],
    refs: &R,
    scoring: &Scoring,
) -> Result<EvalReport, MetricsError> {
    let per_utterance = results
        .iter()
        .map(|res| {
            let id = &res.utterance_id;
            let reference = refs
                .reference(id)
                .ok_or_else(|| MetricsError::MissingReference(id.clone()))?;
            let counts = scoring
                .counts(reference, &res.hypothesis)
                .map_err(|e| MetricsError::Utterance {
                    id: id.clone(),
                    source: Box::new(e),
                })?;
            Ok(UtteranceScore {
                utterance_id: id.clone(),
                counts,
                wall_time_s: res.wall_time_s,
                audio_duration_s: res.audio_duration_s,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(EvalReport::from_scores(per_utterance))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl EvalReport {
    pub fn from_scores(per_utterance: Vec<UtteranceScore>) -> Self {
        let aggregate_counts: ErrorCounts = per_utterance.iter().map(|s| s.counts).sum();
        let wall: f64 = per_utterance.iter().map(|s| s.wall_time_s).sum();
        let audio: f64 = per_utterance.iter().map(|s| s.audio_duration_s).sum();
        Self {
            aggregate_cer: cer(&aggregate_counts),
            rtf: if audio > 0.0 { wall / audio } else { 0.0 },
            aggregate_counts,
            per_utterance,
        }
    }

    pub fn total_wall_time_s(&self) -> f64 {
        self.per_utterance.iter().map(|s| s.wall_time_s).sum()
    }

    pub fn total_audio_s(&self) -> f64 {
        self.per_utterance.iter().map(|s| s.audio_duration_s).sum()
    }

    /// One row per utterance, then a `TOTAL` row. With `timing` off the
    /// wall-time column holds `NA` so the file is reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, mut out: W, timing: bool) -> io::Result<()> {
        writeln!(
            out,
            "utterance_id,ref_len,substitutions,deletions,insertions,cer,wall_time_s,audio_s"
        )?;
        let wall = |w: f64| if timing { format!("{w:.6}") } else { "NA".to_owned() };
        for s in &self.per_utterance {
            let c = &s.counts;
            writeln!(
                out,
                "{},{},{},{},{},{:.4},{},{:.6}",
                csv_field(&s.utterance_id),
                c.ref_len,
                c.substitutions,
                c.deletions,
                c.insertions,
                cer(c),
                wall(s.wall_time_s),
                s.audio_duration_s
            )?;
        }
        let c = &self.aggregate_counts;
        writeln!(
            out,
            "TOTAL,{},{},{},{},{:.4},{},{:.6}",
            c.ref_len,
            c.substitutions,
            c.deletions,
            c.insertions,
            self.aggregate_cer,
            wall(self.total_wall_time_s()),
            self.total_audio_s()
        )
    }

    /// `key=value` lines for plotting scripts.
    pub fn summary(&self, timing: bool) -> String {
        let c = &self.aggregate_counts;
        let mut s = String::new();
        let _ = writeln!(s, "utterances={}", self.per_utterance.len());
        let _ = writeln!(s, "ref_len={}", c.ref_len);
        let _ = writeln!(s, "substitutions={}", c.substitutions);
        let _ = writeln!(s, "deletions={}", c.deletions);
        let _ = writeln!(s, "insertions={}", c.insertions);
        let _ = writeln!(s, "cer={:.4}", self.aggregate_cer);
        let _ = writeln!(s, "audio_s={:.6}", self.total_audio_s());
        if timing {
            let _ = writeln!(s, "wall_time_s={:.6}", self.total_wall_time_s());
            let _ = writeln!(s, "rtf={:.6}", self.rtf);
        }
        s
    }
}
