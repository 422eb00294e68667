use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("outside the model: {0}")]
    OutOfModel(String),
    #[error("on a region boundary: {0}")]
    Boundary(String),
    #[error("open case: {0}")]
    OpenCase(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("tolerance not met: {0}")]
    Tolerance(String),
    #[error("divergent integral: {0}")]
    Divergent(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Range(_) | Error::Format(_) | Error::Json(_) => 2,
            Error::OutOfModel(_)
            | Error::Boundary(_)
            | Error::OpenCase(_)
            | Error::Unsupported(_)
            | Error::Divergent(_) => 3,
            Error::ResourceLimit(_) | Error::Tolerance(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
