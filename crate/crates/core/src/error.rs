use thiserror::Error;

/// Errors raised by the estimators, gradient oracles and optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error(
        "no sign change after {doublings} bracket doublings (threshold {level}, \
         empirical range of the loss [{range_lo:.4e}, {range_hi:.4e}])"
    )]
    BracketNotFound {
        doublings: u32,
        level: f64,
        range_lo: f64,
        range_hi: f64,
    },

    #[error("bisection did not reach half-width {delta} within {iterations} steps")]
    MaxIterations { iterations: u32, delta: f64 },

    #[error("derivative is not available for the {0} loss")]
    UnsupportedDerivative(&'static str),

    #[error("gradient ratio denominator is not positive ({0})")]
    ZeroDenominator(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<RiskError>,
    },

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = RiskError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> RiskError {
    RiskError::InvalidSpec(msg.into())
}
