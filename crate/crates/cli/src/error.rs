use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] expwave_core::Error),
    #[error("comparison error: {0}")]
    Compare(String),
    #[error("manifest verification failed: {0}")]
    ManifestCheck(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
