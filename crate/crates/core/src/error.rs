use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fields live on different surfaces")]
    SurfaceMismatch,

    #[error("scene validation failed: {0}")]
    SceneValidation(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("pair not admissible: {0}")]
    NotAdmissible(String),

    #[error("flow integration failed: {0}")]
    Integration(String),

    #[error("guarantee violated: {0}")]
    Guarantee(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unknown name: {0}")]
    Unknown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
