//! Crate-wide error type.
//!
//! Every fallible operation reports one of these categories so callers can
//! distinguish malformed input files (with line numbers) from contract
//! violations and numeric failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A file failed to parse. Carries the offending line number (1-based).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input data violated a structural invariant (duplicate ids, rank gaps,
    /// score inversions, unknown ids).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A non-finite value appeared during numeric computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in the wrong state (e.g. backward without a
    /// training-mode forward cache).
    #[error("state error: {0}")]
    State(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
