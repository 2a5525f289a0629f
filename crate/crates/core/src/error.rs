use thiserror::Error;

/// Errors produced by coreset extraction, registration and optimization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid target size {target}: must be at least {min}")]
    InvalidTarget { target: usize, min: usize },

    #[error("invalid cluster count {clusters}: must be at least {min}")]
    InvalidClusterCount { clusters: usize, min: usize },

    #[error("matrix has full column rank, no nullspace vector exists")]
    NoNullspace,

    #[error("too few residual rows ({rows}); need more than {min}")]
    TooFewRows { rows: usize, min: usize },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("too few points ({points}) for {required}")]
    TooFewPoints { points: usize, required: usize },

    #[error("no overlap: zero correspondences between frames")]
    NoOverlap,

    #[error("singular system: damped normal equations could not be solved")]
    SingularSystem,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
