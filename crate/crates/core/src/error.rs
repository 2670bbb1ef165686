use std::path::PathBuf;

/// Errors produced by the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z}, znear = {znear})")]
    BehindCamera { z: f64, znear: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("frame {frame} has no valid depth pixels")]
    DegenerateDepth { frame: usize },
    #[error("dataset is empty or too short: {0}")]
    EmptyDataset(String),
    #[error("scene specification has no static primitive")]
    EmptyScene,
    #[error("render state is stale: scene generation {expected} at forward, {found} now")]
    StaleState { expected: u64, found: u64 },
    #[error("render output carries no view context for the backward pass")]
    MissingContext,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("population would drop to zero; kept the {kept} most opaque Gaussians")]
    MinimumPopulation { kept: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data or files, as opposed to
    /// numerical failure or invalid configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::EmptyDataset(_)
                | Error::DegenerateDepth { .. }
                | Error::ShapeMismatch(_)
                | Error::LengthMismatch { .. }
                | Error::EmptyScene
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::DegenerateGeometry(_) | Error::StaleState { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
