use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("reflectivity pole at alpha1 = {alpha1}")]
    Pole { alpha1: f64 },

    #[error("refused: {reason}")]
    Refusal { reason: String },

    #[error("asymptotic regime violated: {}", .0.join("; "))]
    Regime(Vec<String>),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unreliable signature: |g| / noise floor = {ratio:.3} (needs >= {required})")]
    UnreliableSignature { ratio: f64, required: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn refusal(reason: impl Into<String>) -> Self {
        Error::Refusal { reason: reason.into() }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Refusal { .. } | Error::Regime(_) => 2,
            Error::UnreliableSignature { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
