//! Crate-wide error type. Variants map onto the CLI exit codes: config errors
//! exit 2, numerical failures exit 3, I/O errors exit 4.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a mathematical precondition (negative
    /// concentration, empty ensemble, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration, reported with the offending key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Generator assembly produced a rate that breaks the jump-process
    /// interpretation (negative off-diagonal).
    #[error("generator assembly failed at node {node} ({detail})")]
    Assembly { node: usize, detail: String },

    /// Iterative linear solve failed to reach the requested residual.
    #[error("linear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolveFailed {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    /// A state vector left the representable range (overflow / NaN).
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// CLI exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
