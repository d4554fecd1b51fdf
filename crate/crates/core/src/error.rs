use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("propensity must lie in (0, 1], got {0}")]
    InvalidPropensity(f64),
    #[error("action {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("stochastic action selection requires a random generator")]
    MissingRng,
    #[error("importance weights sum to zero")]
    ZeroImportanceWeight,
    #[error("all rewards are zero; the scale constraint cannot be satisfied")]
    AllZeroRewards,
    #[error("total sample weight is zero")]
    ZeroTotalWeight,
    #[error("predictor vanishes on every weighted context")]
    VanishingPredictor,
    #[error("empty dataset")]
    EmptyData,
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
