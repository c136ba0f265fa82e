use std::time::Duration;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("episode already terminal")]
    Terminal,
    #[error("unknown world: {0}")]
    UnknownWorld(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("page {page} out of range ({pages} pages)")]
    PageOutOfRange { page: u32, pages: u32 },
    #[error("out of vocabulary: {0}")]
    OutOfVocabulary(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("search tree: {0}")]
    Tree(String),
    #[error("state enumeration exceeds limit of {limit} states")]
    EnumerationLimit { limit: usize },
    #[error("trajectory is not terminal")]
    NonTerminalTrajectory,
    #[error("training diverged: gradient norm {0:.3e} exceeds threshold")]
    Divergence(f64),
    #[error("adapter protocol: {0}")]
    Protocol(String),
    #[error("adapter timed out after {0:?}")]
    Timeout(Duration),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
