use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    /// A weighted cross-product matrix was numerically singular. `column` is
    /// the index of the design column found to be linearly dependent.
    #[error("rank deficient system in {context}: column {column} is linearly dependent (residual pivot {pivot:.3e})")]
    Rank {
        context: String,
        column: usize,
        pivot: f64,
    },

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("study aborted: {failed} of {total} replicates failed (first failure in replicate {first_replicate}: {first_message})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_replicate: usize,
        first_message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
