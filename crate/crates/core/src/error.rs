use thiserror::Error;

/// Errors raised by the samplers, estimators and geometry helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0} (must be between 1 and {max})", max = crate::lattice::MAX_DIM)]
    UnsupportedDimension(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("walker {0} is not alive")]
    DeadWalker(usize),

    #[error("the walk system has no alive walker")]
    EmptySystem,

    #[error("{0} is not a mark of the partition")]
    NotAMark(String),

    #[error("point {0} lies outside the window")]
    OutsideWindow(String),

    #[error("window does not cover the required region: {0}")]
    InsufficientCoverage(String),

    #[error("regions of the crossing query overlap")]
    OverlappingRegions,

    #[error("translates of the base set overlap")]
    OverlappingTranslates,

    #[error("enumeration guard exceeded: {count} embeddings > {guard}")]
    GuardExceeded { count: u128, guard: u128 },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("no valid embedding found for the supplied path: {0}")]
    EmbeddingNotFound(String),

    #[error("base set too large for exact evaluation ({0} sites)")]
    BaseTooLarge(usize),

    #[error("probability of the event is zero; bound undefined")]
    ZeroProbability,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
