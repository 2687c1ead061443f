use std::path::PathBuf;

/// Errors produced by the reconstruction engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("elevation unavailable: view set carries no elevation metadata")]
    ElevationUnavailable,

    #[error("image too small for {levels} MS-SSIM levels: min dimension {min_dim} < {required}")]
    ImageTooSmall {
        levels: usize,
        min_dim: usize,
        required: usize,
    },

    #[error("refiner failed in round {round}: {message}")]
    Refiner { round: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn format_err(path: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        message: msg.into(),
    }
}
