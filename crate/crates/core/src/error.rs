use thiserror::Error;

/// Errors produced anywhere in the motion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training aborted: {0}")]
    Diverged(String),

    #[error("incompatible checkpoint: found version {found}, expected {expected}")]
    Incompatible { found: u32, expected: u32 },

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
