use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("config: {0}")]
    Config(String),
    #[error("override: {0}")]
    Override(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Core(#[from] rfscore::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("thread pool: {0}")]
    Threads(String),
}
