use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty split")]
    EmptySplit,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown style tag `{0}`")]
    UnknownStyle(String),

    #[error("unknown world `{0}`")]
    UnknownWorld(String),

    #[error("inconsistent feature dimension: expected {expected}, found {found} for id {id}")]
    InconsistentFeatureDimension {
        expected: usize,
        found: usize,
        id: u64,
    },

    #[error("duplicate feature id {0}")]
    DuplicateFeatureId(u64),

    #[error("missing feature for input id {0}")]
    MissingFeature(u64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sequence of {len} positions exceeds max_len {max_len}")]
    LengthOverflow { len: usize, max_len: usize },

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("all-zero token frequencies")]
    ZeroFrequencies,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("IDF undefined: CIDEr needs a corpus of at least two ids")]
    IdfUndefined,

    #[error("backbone fingerprint mismatch: checkpoint expects {expected}, backbone is {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid config:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("training aborted: {reason} (state dumped to {dump})")]
    Diverged { reason: String, dump: String },

    #[error("scorer failed: {0}")]
    Scorer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
