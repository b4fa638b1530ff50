use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("KL divergence is infinite: target has mass {mass} at index {index} where the prediction is zero")]
    InfiniteDivergence { index: usize, mass: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} index {index} (have {len})")]
    UnknownIndex {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("artifact {} was produced by a different configuration ({found}, expected {expected})", path.display())]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("artifact {} already exists with different contents", path.display())]
    ArtifactExists { path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class: 1 usage, 2 data validation,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::InfiniteDivergence { .. }
            | Error::Divergence(_)
            | Error::DimensionMismatch { .. } => 3,
            Error::Parse { .. }
            | Error::Format(_)
            | Error::Validation(_)
            | Error::UnknownIndex { .. }
            | Error::Checkpoint(_)
            | Error::VersionMismatch { .. }
            | Error::Json(_) => 2,
            Error::Config(_)
            | Error::MissingArtifact { .. }
            | Error::ConfigMismatch { .. }
            | Error::ArtifactExists { .. }
            | Error::Io(_) => 1,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
