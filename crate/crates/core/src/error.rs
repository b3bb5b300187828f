use std::path::PathBuf;

use thiserror::Error;

use crate::ftrl::SolverDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of kernels, policies, losses or layouts disagree.
    #[error("structural error: {0}")]
    Structural(String),

    /// A configuration value is out of its admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("FTRL solver did not converge: {0}")]
    Solver(SolverDiagnostics),

    /// The requested quantity only exists for a stochastic world.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
