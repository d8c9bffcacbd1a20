//! Scoring: S/D/I alignment, CER, relative reduction, real-time factor.

mod align;
mod normalize;
mod report;

pub use align::{alignment, cer, levenshtein_align, EditOp, ErrorCounts};
pub use normalize::{MappingTable, Normalizer};
pub use report::{build_report, EvalReport, References, Scoring, UtteranceScore, Vocabulary};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference is empty; CER is undefined")]
    EmptyReference,

    #[error("baseline CER must be positive, got {0}")]
    NonPositiveBaseline(f64),

    #[error("no reference for utterance `{0}`")]
    MissingReference(String),

    #[error("utterance `{id}`: {source}")]
    Utterance { id: String, source: Box<MetricsError> },

    #[error("malformed mapping table at line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },

    #[error("token {0} has no vocabulary entry")]
    UnknownToken(u32),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// `100 * (base - new) / base`.
pub fn relative_reduction(base_cer: f64, new_cer: f64) -> Result<f64, MetricsError> {
    if !(base_cer > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(base_cer));
    }
    Ok(100.0 * (base_cer - new_cer) / base_cer)
}
