use thiserror::Error;

/// Errors produced by the kernels, oracles and estimators in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite log-density at {which} point {point:?}")]
    NonFiniteDensity { which: &'static str, point: Vec<f64> },

    #[error("operation requires a standard Gaussian target: {0}")]
    UnsupportedTarget(&'static str),

    #[error("all {n} candidate log-weights are -inf; nothing to select")]
    DegenerateSelection { n: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("enumeration budget exceeded: {what} needs {needed} terms, limit is {limit}")]
    EnumerationLimit { what: &'static str, needed: u128, limit: u128 },

    #[error("matrix is not reversible w.r.t. pi (max detailed-balance violation {max_violation:e}); use the lazy wrapper or a Metropolis kernel")]
    NotReversible { max_violation: f64 },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("trace too short: {len} transitions, need at least {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("step {step} failed: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("inequality `{name}` violated by {violation:e}: {witness}")]
    InequalityViolation { name: String, violation: f64, witness: String },

    #[error("quadrature did not reach tolerance: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
