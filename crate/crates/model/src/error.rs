use std::path::PathBuf;

use graspreason_core::dataset::DatasetError;
use graspreason_core::GeometryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("no [SPT]-delimited target in the sequence")]
    MissingTarget,
    #[error("empty target between [SPT] markers")]
    EmptyTarget,
    #[error("span {start}..{end} outside a sequence of {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step} (batch {fingerprint})")]
    NonFinite { step: usize, fingerprint: String },
    #[error("grounding failed: {0}")]
    Grounding(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        ModelError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
