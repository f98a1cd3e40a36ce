use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NsflError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NsflError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("degenerate (near zero-norm) vector for `{0}`")]
    DegenerateVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("missing query component `{0}`")]
    MissingComponent(String),

    #[error("rank {rank} out of range for {len} atoms")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("normalizing maximum must be positive, got {0}")]
    NonPositiveMax(f64),

    #[error("vectors are collinear; orthogonal rejection is undefined")]
    Collinear,

    #[error("vector sum cancels to zero")]
    Cancellation,

    #[error("retraction of a zero vector")]
    DegenerateRetraction,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("insufficient data: {n_effective} non-zero differences (need at least 5)")]
    InsufficientData { n_effective: usize },

    #[error("no judgment for query `{0}`")]
    MissingJudgment(String),

    #[error("invalid formula: {0}")]
    InvalidFormula(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl NsflError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NsflError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad inputs or configuration (exit code 2) as opposed
    /// to per-item numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            NsflError::Io { .. }
                | NsflError::Format(_)
                | NsflError::DuplicateId(_)
                | NsflError::DegenerateVector(_)
                | NsflError::Dimension { .. }
                | NsflError::Config(_)
                | NsflError::MissingJudgment(_)
        )
    }
}
