use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("degenerate input to {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("training diverged at iteration {iteration}: total loss {total}")]
    Diverged { iteration: usize, total: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Incompatible(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 2,
            Error::Dimension { .. } | Error::Degenerate(_) | Error::Numeric(_) | Error::Diverged { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
