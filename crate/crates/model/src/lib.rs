//! Encoder-decoder models that translate normalized instruction sequences
//! into function-name tokens: a pre-norm Transformer and a bidirectional
//! LSTM encoder with an attentional LSTM decoder, both trained in `f64` on
//! a small reverse-mode autograd tape.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
mod seq2seq;
pub mod tape;
pub mod train;
mod transformer;

use thiserror::Error;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use config::{AdamConfig, Arch, LrSchedule, ModelConfig, TrainConfig};
pub use data::{EncodedSet, Vocabularies};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{loss, parameter_count, softmax_rows, Example, Model};
pub use train::{decode_f1, fine_tune, train, DecodeF1, EpochLog, TrainOutcome, Validator};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("target has no non-PAD positions")]
    EmptyTarget,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: u64 },
    #[error("{which} vocabulary digest mismatch: expected {expected}, found {found}")]
    VocabMismatch { which: &'static str, expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
