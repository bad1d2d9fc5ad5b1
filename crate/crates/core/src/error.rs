use thiserror::Error;

/// Errors raised by the library. Every fallible operation returns [`Result`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("index error: {0}")]
    Index(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("singular basis: {0}")]
    SingularBasis(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
