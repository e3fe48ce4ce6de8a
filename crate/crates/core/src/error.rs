use thiserror::Error;

/// Errors raised by the mechanism primitives, the solver and the oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid problem: {field} {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("dimension mismatch: expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vote {value} on alternative {index} lies outside the vote box ±{bound}")]
    VoteBox { index: usize, value: f64, bound: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("agent count n = 1 admits no opponents, but {0} opponent vote vectors were given")]
    NoOpponentsExpected(usize),

    #[error("expected {expected} opponent vote vectors, found {found}")]
    OpponentCount { expected: usize, found: usize },

    #[error("strategy representation does not match the type distribution: {0}")]
    RepresentationMismatch(String),

    #[error("{stage} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("enumeration needs {needed} profiles, cap is {cap}")]
    CapExceeded { needed: f64, cap: f64 },

    #[error("instance outside oracle limits: {0}")]
    OracleLimits(String),

    #[error("marginal utility must be positive, got {0}")]
    NonPositiveMarginalUtility(f64),

    #[error("epsilon {epsilon} outside (0, delta/4 = {limit}]")]
    EpsilonOutOfRange { epsilon: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
