use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} queried at {value} outside its domain [{min}, {max}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("correlator derivative is singular at x = {x}")]
    SingularDerivative { x: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "grid too coarse: shift {max_shift:.4} exceeds the s extent {s_extent:.4}; \
         largest safe time for this grid is {max_safe_time:.4}"
    )]
    Aliasing {
        max_shift: f64,
        s_extent: f64,
        max_safe_time: f64,
    },

    #[error("(X,Y) and (r,s) generators disagree: max relative mismatch {mismatch:.3e}")]
    TransformationMismatch { mismatch: f64 },

    #[error("state is not normalized: chi(0) = {chi0}")]
    Unnormalized { chi0: f64 },

    #[error("ill-conditioned estimate: {0}")]
    IllConditioned(String),

    #[error("correlator is not a valid covariance function: {0}")]
    InvalidCorrelator(String),

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
