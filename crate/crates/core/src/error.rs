use thiserror::Error;

use crate::solver::SolverTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("out of range: {0}")]
    Range(String),

    /// A query that the online protocol forbids (future round, or a round
    /// that has left the active window). Always indicates a caller bug.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("configuration rejected: {message}")]
    Config {
        message: String,
        /// Smallest admissible tolerance when the failure is a tolerance test.
        min_delta: Option<f64>,
    },

    /// The inner loop hit the safety cap; carries everything recorded so far.
    #[error("inner loop capped at round {round} after {tau} prox-grad steps")]
    Capped {
        round: usize,
        tau: u64,
        partial: Box<SolverTrace>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("player {player}: {source}")]
    Player { player: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("schema error: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config {
            message: msg.into(),
            min_delta: None,
        }
    }
}

impl Error {
    /// The innermost error, looking through player tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Player { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
