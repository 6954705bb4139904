use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("empty target")]
    EmptyTarget,
    #[error("unshufflable: a document needs at least two sentences to shuffle")]
    Unshufflable,
    #[error("corpus too small: no other document to draw a sentence from")]
    CorpusTooSmall,
    #[error("no negative sample kind is feasible for document {0}")]
    NoFeasibleNegative(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("unknown sentence in external oracle: {0:?}")]
    UnknownSentence(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no LM positions")]
    NoLmPositions,
    #[error("batch has no human-written sample")]
    NoHumanSample,
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("position {pos} out of range for {rows} decoder states")]
    PositionOutOfRange { pos: usize, rows: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate zero vector")]
    ZeroVector,
    #[error("reference sample has zero variance")]
    DegenerateReference,
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
