use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The on-disk container could not be parsed.
    #[error("format error: {0}")]
    Format(String),
    /// Inputs violate a shape, range or consistency invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A caller-supplied argument is out of its domain.
    #[error("argument error: {0}")]
    Argument(String),
    /// Non-finite values were encountered.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Not enough source area to honour a request.
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Validation(_) | Error::Argument(_) | Error::Capacity(_)
        )
    }
}
