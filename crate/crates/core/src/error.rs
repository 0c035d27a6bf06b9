use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document {0:?} has no text")]
    EmptyDocument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("summary is empty")]
    EmptySummary,

    #[error("reference is empty")]
    EmptyReference,

    #[error("document {0:?} has no reference summary")]
    MissingReference(String),

    #[error("document {0:?} has no salience labels")]
    MissingLabels(String),

    #[error("grid has {available} usable fractions, need {needed}")]
    InsufficientGrid { needed: usize, available: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    #[error("sequence of length {len} exceeds max positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("ids do not match between generated and reference files: {0}")]
    IdMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (exit code 2) rather than internal faults.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::ShapeMismatch { .. } | Error::LossNotScalar(_) | Error::NonFiniteGradient(_)
        )
    }
}
