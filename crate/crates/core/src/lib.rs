//! Retrieval-augmented decoding for encoder-decoder speech recognizers.
//!
//! Two datastores steer a frozen model at inference time:
//!
//! * a **sentence datastore** keyed by mean-pooled encoder output, whose
//!   nearest neighbours are packed in front of the test audio as in-context
//!   prompts (audio prepended, transcripts forced into the decoder), and
//! * a **token datastore** keyed by a decoder activation, whose nearest
//!   neighbours form a kNN distribution mixed into every decoding step.
//!
//! [`pipeline::run_batch`] drives either, both or neither over a test set;
//! [`metrics`] scores the hypotheses. [`model::ToyModel`] and [`synth`]
//! provide a fully seeded stand-in recognizer and corpus so everything runs
//! on a laptop.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod index;
pub mod knn;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sentence;
pub mod storage;
pub mod synth;

mod seed;

pub use corpus::{AudioSource, Corpus, Transcript, Utterance};
pub use index::{FlatIndex, Neighbor, VectorKey};
pub use knn::{Distribution, KnnParams, TokenDatastore};
pub use model::{AsrModel, AudioSegment, ReplayModel, TokenId, ToyModel, ToyModelConfig};
pub use pipeline::{DecodeConfig, DecodeResult, Mode};
pub use sentence::{FailurePolicy, PromptPlan, SentenceDatastore, SentenceEntry};
