use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Variants are grouped by the process exit code the CLI maps them to:
/// parameter errors are usage errors, input problems are data errors and
/// anything that went wrong inside the arithmetic is a numeric error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("no embedding for {} item(s): {}", .missing.len(), .missing.join(", "))]
    Coverage { missing: Vec<String> },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("covariance is not positive definite (pivot {pivot} = {value:e})")]
    SingularCovariance { pivot: usize, value: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 2,
            Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Format(_)
            | Error::Coverage { .. }
            | Error::Index { .. }
            | Error::Io(_) => 3,
            Error::DegeneratePrior(_) | Error::SingularCovariance { .. } | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
