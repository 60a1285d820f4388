use thiserror::Error;

/// Errors raised across the crate. Each maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("regime refused: violated {0}")]
    RegimeRefused(String),
    #[error("coupled generator required: ensemble carries no Wiener increments")]
    CoupledGeneratorRequired,
    #[error("usage error: {0}")]
    Usage(String),
    #[error("infinite norm: {0}")]
    InfiniteNorm(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("batch {index} failed: {msg}")]
    Batch { index: usize, msg: String },
    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) => 2,
            Error::RegimeRefused(_) | Error::UnsupportedRegime(_) => 3,
            _ => 4,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
