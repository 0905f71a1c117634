use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text contains no tokens")]
    EmptyText,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token sequence must hold at least one token")]
    EmptySequence,
    #[error("split leaves an empty side ({train} train / {valid} valid)")]
    TooSmall { train: usize, valid: usize },
    #[error("sequence of length {len} too short (needs {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("no replacement candidates: {available} available, {needed} needed")]
    NoCandidates { available: usize, needed: usize },
    #[error("non-contiguous split stayed degenerate after {retries} retries")]
    DegenerateSplit { retries: usize },
    #[error("no distinct arrangement of the selected tokens exists")]
    NoDistinctArrangement,
    #[error("batch of {batch} cannot supply {needed} candidates per anchor")]
    BatchTooSmall { batch: usize, needed: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("tape already consumed by a backward pass")]
    DoubleBackward,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("sentence length {0} not covered by the bin edges")]
    UncoveredLength(usize),
    #[error("class {class} has {count} examples, need at least {min}")]
    InsufficientExamples {
        class: usize,
        count: usize,
        min: usize,
    },
    #[error("all validation scores are zero")]
    AllZero,
    #[error("invalid score {0}: scores must be finite and non-negative")]
    InvalidScore(f64),
    #[error("members disagree on class count: {expected} vs {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient | Error::DoubleBackward | Error::DimMismatch { .. }
        )
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
