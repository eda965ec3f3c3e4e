use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument failed validation (shape mismatch,
    /// non-stochastic row, non-finite value, out-of-range index, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("{what} did not converge: residual {residual:.3e} > tolerance {tolerance:.3e} after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// The demonstration-budget horizon `ceil(log_γ(ε̃ / (2 √d)))` is only
    /// defined for `ε̃ < 2 √d`.
    #[error("demonstration budget undefined: eps_tilde {eps_tilde} must be below 2*sqrt(d) = {limit}")]
    BudgetUndefined { eps_tilde: f64, limit: f64 },

    /// The requested operation carries guarantees only for linear reward
    /// models and refuses to run on other variants.
    #[error("operation supports only linear reward models")]
    LinearModelRequired,

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
