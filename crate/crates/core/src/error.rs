use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("argument {name} = {value} outside domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("invalid environment specification: {0}")]
    InvalidSpec(String),

    #[error("perpetuity diverges for this environment ({0})")]
    DivergentPerpetuity(String),

    #[error("step budget of {n_max} exhausted before reaching tolerance {eps:e}")]
    BudgetExceeded { n_max: usize, eps: f64 },

    #[error("environment cannot be classified: {0}")]
    Unclassifiable(String),

    #[error("moment diverged: {0}")]
    MomentDiverged(String),

    #[error("inconclusive Monte Carlo evidence: {0}")]
    Inconclusive(String),

    #[error("dual perpetuity tail unavailable: {0}")]
    TailUnavailable(String),

    #[error("{operation} needs a {expected} environment, found {found}")]
    WrongRegime {
        operation: &'static str,
        expected: &'static str,
        found: String,
    },

    #[error("decomposition degenerate: extinction probability {q} is 0 or 1")]
    DegenerateDecomposition { q: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
