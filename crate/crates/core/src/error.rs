use thiserror::Error;

/// Errors produced by the numerical routines and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition on the input size or shape is violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The requested grid would exceed the configured memory budget.
    #[error("grid needs {required_bytes} bytes, budget is {budget_bytes} bytes")]
    Resource {
        required_bytes: u64,
        budget_bytes: u64,
    },

    /// An iterative scheme did not reach its tolerance.
    #[error("no convergence in {what}: achieved {achieved:e}, wanted {wanted:e}")]
    Convergence {
        what: &'static str,
        achieved: f64,
        wanted: f64,
    },

    /// A file did not match the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
