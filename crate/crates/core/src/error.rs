use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("construction failure: {0}")]
    ConstructionFailure(String),

    #[error("gradient descent diverged: {0}")]
    Divergence(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("condition not met: {0}")]
    ConditionNotMet(String),

    #[error("inconsistent observations: {0}")]
    Inconsistency(String),

    #[error("rank deficient block: {0}")]
    RankDeficiency(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
