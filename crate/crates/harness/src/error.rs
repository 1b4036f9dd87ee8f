use std::path::PathBuf;

use landau_core::solver::RunError;
use landau_core::LandauError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] LandauError),
    #[error(transparent)]
    Run(#[from] Box<RunError>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("schema_version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("config: {0}")]
    Config(String),
}

impl From<RunError> for HarnessError {
    fn from(e: RunError) -> Self {
        Self::Run(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
