use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (kernel, inducing set, sizes).
    #[error("configuration error: {0}")]
    Config(String),
    /// A factorization or solve failed even after jitter escalation.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Inputs violate a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
