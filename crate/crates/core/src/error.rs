//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model construction, analysis, simulation, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A graph definition violates a structural invariant (self-loop,
    /// duplicate id, nonpositive weight, unknown endpoint, ...).
    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The electrical or communication graph is not connected where the
    /// closed-loop analysis requires it to be.
    #[error("connectivity violation: {0}")]
    Connectivity(String),

    /// The model is outside both stability regimes (scaling identity or
    /// commuting Laplacian product), or an operation received coefficients
    /// that the active regime forbids.
    #[error("stability regime violation: {0}")]
    Regime(String),

    /// A DGU joined with a reference voltage different from the common one.
    #[error("reference voltage mismatch: {0}")]
    ReferenceMismatch(String),

    /// The requested quantity is undefined in the current regime.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// Non-finite state, singular solve, or an eigensolver failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Scenario text, event list, or check list could not be interpreted.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for input problems, 3 for
    /// connectivity/regime violations, 4 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Io(_) | Error::MalformedGraph(_) | Error::Dimension(_) => 2,
            Error::Connectivity(_)
            | Error::Regime(_)
            | Error::ReferenceMismatch(_)
            | Error::UnsupportedRegime(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
