use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid split spec: {0}")]
    InvalidSplit(String),

    #[error(
        "class {class_id} has {size} members, needs at least {needed} for stratified splitting"
    )]
    ClassTooSmall {
        class_id: usize,
        size: usize,
        needed: usize,
    },

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("requested {requested} labeling examples but only {available} are available")]
    SampleSize { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("provider rejected token {token:?} at index {index}: {message}")]
    UnknownToken {
        token: String,
        index: usize,
        message: String,
    },

    #[error("provider returned non-finite logit {value} for candidate {index} ({token:?})")]
    NonFiniteLogit {
        index: usize,
        token: String,
        value: f64,
    },

    #[error("provider returned {got} logits for {expected} candidates")]
    LogitCount { expected: usize, got: usize },

    #[error("no vocabulary tokens start with marker {0:?}")]
    EmptyVocabulary(String),

    #[error("sentence is not known to the synthetic provider: {0:?}")]
    UnknownSentence(String),

    #[error("scoring row {row} failed: {cause}")]
    Row { row: usize, cause: Box<Error> },

    #[error("{what} fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("unsupported cache version {found} (expected {expected})")]
    CacheVersion { expected: u32, found: u32 },

    #[error("corrupt cache file: {0}")]
    CorruptCache(String),

    #[error("instance too large for exhaustive search: {count} assignments exceeds {limit}")]
    SearchTooLarge { count: u128, limit: u128 },

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("incomplete records: {}", .0.join("; "))]
    Incomplete(Vec<String>),

    #[error("serialization error: {0}")]
    Serde(serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// True for failures caused by the model backend (transport, protocol, bad logits).
    pub fn is_provider_error(&self) -> bool {
        match self {
            Error::Transport(_)
            | Error::UnknownToken { .. }
            | Error::NonFiniteLogit { .. }
            | Error::LogitCount { .. }
            | Error::EmptyVocabulary(_)
            | Error::UnknownSentence(_) => true,
            Error::Row { cause, .. } => cause.is_provider_error(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e)
    }
}
