use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// config -> 2, data -> 3, numeric -> 4, everything else -> 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("determinism error: {0}")]
    Determinism(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}
