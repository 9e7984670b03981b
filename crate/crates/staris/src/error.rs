use thiserror::Error;

/// Errors surfaced by configuration validation, channel generation, and
/// the optimization drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration failed a consistency check.
    #[error("invalid config: {0}")]
    Config(String),
    /// A numeric argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A linear system could not be solved (matrix not positive definite).
    #[error("solver failure: {0}")]
    Solver(String),
    /// An optimizer was handed an infeasible starting point.
    #[error("infeasible initial state: {0}")]
    InfeasibleInit(String),
    /// The strictness witness does not exist for this channel draw.
    #[error("witness not found: {0}")]
    WitnessNotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
