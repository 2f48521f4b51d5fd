use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("malformed span [{start}, {end}) for sequence of length {len}")]
    MalformedSpan { start: usize, end: usize, len: usize },

    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),

    #[error("non-finite score in lattice at {0}")]
    NonFiniteScore(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("gold annotation does not match task: {0}")]
    GoldTaskMismatch(String),

    #[error("instance `{0}` carries no gold annotation")]
    MissingGold(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("feature schema requests lm_perplexity but no language model was supplied")]
    MissingLanguageModel,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    FormatVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the error class: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::FormatVersion { .. } | Error::MissingLanguageModel => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
