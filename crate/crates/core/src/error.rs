use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed file structure: wrong magic, missing property, bad header.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file carried a value that cannot be used.
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    /// A decoded bundle violates one of its structural invariants.
    #[error("corrupt bundle: {0}")]
    Corruption(String),

    /// A scene refers to an asset that does not exist.
    #[error("unknown asset id `{0}`")]
    Reference(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
