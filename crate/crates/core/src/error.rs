//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller-supplied data; `line` is the offending record index.
    #[error("input error at line {line}: {msg}")]
    Input { line: usize, msg: String },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint was produced under a different model configuration.
    #[error("config mismatch: differing fields: {}", fields.join(", "))]
    ConfigMismatch { fields: Vec<String> },

    /// Malformed file content; `line` is 1-based within the file.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Tensor shape mismatch inside the compute engine.
    #[error("shape mismatch in op `{op}`: {msg}")]
    Shape { op: &'static str, msg: String },

    /// An API precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sampler could not produce the requested items.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Numerical failure (non-convergence, non-finite values).
    #[error("numerical error: {msg}")]
    Numerical { msg: String, iterations: Option<usize> },

    /// Corrupt, truncated, or incompatible checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn sampling(msg: impl Into<String>) -> Self {
        Error::Sampling(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical { msg: msg.into(), iterations: None }
    }

    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    /// True when the failure is attributable to user input rather than an
    /// internal defect; drives the CLI exit code.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Input { .. }
                | Error::Config(_)
                | Error::ConfigMismatch { .. }
                | Error::Format { .. }
                | Error::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
