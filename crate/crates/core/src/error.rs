use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("series shorter than the window: {0}")]
    EmptyOutput(String),
    #[error("index build failed: {0}")]
    Build(String),
    #[error("workload generation failed: {0}")]
    Workload(String),
    #[error("snapshot rejected: {0}")]
    Snapshot(String),
    #[error("exactness gate failed: {0}")]
    Exactness(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad caller input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidQuery(_)
                | Error::EmptyOutput(_)
                | Error::Build(_)
                | Error::Workload(_)
                | Error::Snapshot(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
