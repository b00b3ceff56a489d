use std::fmt;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// File-format violations: bad magic, version, truncation, inconsistent headers.
    #[error("format error: {0}")]
    Format(String),
    /// Shape disagreements between vectors, matrices, and models.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Precondition violations on operation inputs.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A numerical routine failed (factorization, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Text-file parse errors carrying a line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(msg: impl fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }
    pub fn dimension(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }
    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::Invalid(msg.to_string())
    }
    pub fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }
}
