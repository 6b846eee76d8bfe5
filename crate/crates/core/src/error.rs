use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("payload size mismatch for {path}: expected {expected} bytes, found {actual}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("voxel ({x}, {y}, {z}) is not covered by any patch")]
    Coverage { x: usize, y: usize, z: usize },
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("[{volume_id}] {stage}: {source}")]
    Stage {
        volume_id: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the volume and pipeline stage it came from.
    pub fn in_stage(self, volume_id: &str, stage: &'static str) -> Self {
        Error::Stage {
            volume_id: volume_id.to_string(),
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
