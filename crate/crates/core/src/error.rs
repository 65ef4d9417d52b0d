use std::path::PathBuf;

/// Errors produced anywhere in the duration-modelling stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward has already been run on this tape")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite value at position {position}")]
    NonFinite { position: usize },

    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("negative duration {value} at position {position}")]
    NegativeDuration { position: usize, value: i64 },

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("empty mask: no valid positions")]
    EmptyMask,

    #[error("empty class `{0}`")]
    EmptyClass(String),

    #[error("model kind mismatch: expected {expected}, found {found}")]
    ModelKindMismatch { expected: String, found: String },

    #[error("model has not been trained")]
    Untrained,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
