use thiserror::Error;

/// Errors surfaced by the planning and estimation routines.
#[derive(Debug, Error)]
pub enum McmpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario is invalid: {0}")]
    Scenario(String),

    #[error("linear algebra failure: {0}")]
    Numeric(String),

    #[error("no feasible plan: {0}")]
    Infeasible(String),

    #[error("mean shift target is unreachable: {0}")]
    UnreachableShift(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, McmpError>;
