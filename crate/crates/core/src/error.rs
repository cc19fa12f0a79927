use thiserror::Error;

pub type Result<T, E = ErdError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErdError {
    /// An instance or learner parameter is out of range or inconsistent.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// The caller broke an operation's precondition (stepping a finished
    /// episode, out-of-range index, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema_version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl ErdError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ErdError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        ErdError::Usage(message.into())
    }

    pub(crate) fn from_json(err: &serde_json::Error) -> Self {
        ErdError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for ErdError {
    fn from(err: std::io::Error) -> Self {
        ErdError::Io(err.to_string())
    }
}
