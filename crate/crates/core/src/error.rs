use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the assignment engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no valid records in {}: {rejected} rejected", path.display())]
    NoValidRecords { path: PathBuf, rejected: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("merge conflict: {0}")]
    MergeConflict(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("ticket {0} has no gold group")]
    MissingGold(String),

    #[error("all documents are empty")]
    EmptyDocuments,

    #[error("class {0} has no training examples")]
    EmptyClass(usize),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("no training data")]
    NoTrainingData,

    #[error("non-finite loss at epoch {epoch} while training {kind}")]
    NonFiniteLoss { kind: String, epoch: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label codec mismatch between ensemble members")]
    CodecMismatch,

    #[error("invalid threshold {0}: thresholds must lie in [0, 1]")]
    InvalidThreshold(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rule {rule}: invalid pattern: {message}")]
    RulePattern { rule: String, message: String },

    #[error("duplicate rule name {0}")]
    DuplicateRule(String),

    #[error("rule {rule}: {message}")]
    InvalidRule { rule: String, message: String },

    #[error("decision/gold mismatch: {0}")]
    IdMismatch(String),

    #[error("unsupported bundle format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
