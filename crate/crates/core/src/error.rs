use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("expected {expected} rows, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] diffcore::TensorError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::PixelBounds { .. } => "bounds",
            Error::BehindCamera(_) | Error::Geometry(_) => "geometry",
            Error::Numeric(_) => "numeric",
            Error::Arity { .. } => "arity",
            Error::DegenerateMesh(_) => "degenerate-mesh",
            Error::Unsupported(_) => "unsupported",
            Error::Format { .. } => "format",
            Error::Io { .. } | Error::Image(_) => "io",
            Error::Tensor(_) => "tensor",
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
