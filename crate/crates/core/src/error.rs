use thiserror::Error;

/// Errors produced by the sampler, its diagnostics and configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite coordinate in particle {particle} at iteration {iteration}")]
    NonFinite { iteration: u64, particle: usize },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside trajectory span [0, {end}]")]
    OutOfRange { t: f64, end: f64 },

    #[error("operation requires every snapshot to be retained")]
    InsufficientRetention,

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("stein kernel double sum is negative ({0:e}); kernel derivatives are inconsistent")]
    NegativeKsd(f64),

    #[error(
        "combined support size {size} exceeds the exact solver cap {cap}; \
         use the sliced or one-dimensional estimators"
    )]
    SupportCapExceeded { size: usize, cap: usize },

    #[error("target cannot be sampled exactly")]
    Unsampleable,

    #[error("target has no analytic Gaussian moments")]
    NoAnalyticMoments,

    #[error("{0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
