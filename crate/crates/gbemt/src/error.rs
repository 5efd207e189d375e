//! Toolkit-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid UTF-8 in {path} at byte offset {byte_offset}")]
    Utf8 { path: PathBuf, byte_offset: usize },

    #[error("line count mismatch: {source_path} has {source_lines} lines but {target_path} has {target_lines}")]
    Alignment {
        source_path: PathBuf,
        target_path: PathBuf,
        source_lines: usize,
        target_lines: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("length error: sequence length {got} exceeds maximum {max}")]
    SequenceTooLong { got: usize, max: usize },

    #[error("vocab error: token id {id} out of range for vocabulary of size {vocab}")]
    VocabId { id: u32, vocab: usize },

    #[error("unknown target tag {requested}; registered tags: {}", registered.join(", "))]
    UnknownTag {
        requested: String,
        registered: Vec<String>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("degenerate batch: every target position is padding")]
    DegenerateBatch,

    #[error("backward already consumed this tape; build a fresh tape per step")]
    TapeConsumed,

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownTag { .. } => 1,
            Error::Training(_) | Error::DegenerateBatch => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for I/O failures tagged with their path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
