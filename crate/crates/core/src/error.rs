use std::io;

use thiserror::Error;

/// Errors produced anywhere in the constraint-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text. `line` is 1-based; `position` is a byte offset within that line.
    #[error("parse error at line {line}, position {position}: {message}")]
    Parse {
        line: usize,
        position: usize,
        message: String,
    },

    /// Input parsed but its shape is inconsistent (mismatched dimensions and the like).
    #[error("schema error: {0}")]
    Schema(String),

    /// A value is outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Unknown registry name, unknown key or otherwise invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was driven in an order it does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training diverged.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn parse(line: usize, position: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            position,
            message: message.into(),
        }
    }

    /// Short machine-readable tag of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Divergence(_) => "divergence",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
