use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] stgp_core::Error),
    #[error(transparent)]
    Mpc(#[from] stgp_mpc::Error),
    #[error(transparent)]
    Race(#[from] race_sim::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// Process exit code: 1 validation failure, 2 configuration or input
    /// error, 3 numerical error.
    pub fn exit_code(&self) -> i32 {
        const VALIDATION: i32 = 1;
        const CONFIG: i32 = 2;
        const NUMERICAL: i32 = 3;
        fn core(e: &stgp_core::Error) -> i32 {
            match e {
                stgp_core::Error::Config(_) => CONFIG,
                stgp_core::Error::Numerical(_) | stgp_core::Error::Contract(_) => NUMERICAL,
            }
        }
        fn mpc(e: &stgp_mpc::Error) -> i32 {
            match e {
                stgp_mpc::Error::Config(_) => CONFIG,
                stgp_mpc::Error::Model(e) => core(e),
                stgp_mpc::Error::Numerical(_) | stgp_mpc::Error::Contract(_) => NUMERICAL,
            }
        }
        match self {
            Self::Validation(_) => VALIDATION,
            Self::Config(_) | Self::Io { .. } | Self::Json(_) | Self::Csv(_) => CONFIG,
            Self::Core(e) => core(e),
            Self::Mpc(e) => mpc(e),
            Self::Race(e) => match e {
                race_sim::Error::Controller(e) => mpc(e),
                _ => CONFIG,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
