use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while loading data or running a stage.
///
/// Variants split roughly into data problems (bad input files, referential
/// integrity), usage problems (invalid parameters) and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("annotation references unknown item `{0}`")]
    UnknownItem(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("unknown agent `{0}`")]
    UnknownAgent(String),

    #[error("duplicate annotation for annotator `{annotator}` on item `{item}`")]
    DuplicateAnnotation { annotator: String, item: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("label {0} is not part of the label scheme")]
    LabelOutsideScheme(i32),

    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("session error: {0}")]
    Session(String),

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("artifact mismatch: {0}")]
    Reproducibility(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's arguments rather than the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_) | Error::InvalidScheme(_))
    }
}
