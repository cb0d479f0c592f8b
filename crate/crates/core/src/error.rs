use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TomoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected \"TOMO\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported TOMO version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("tensor contains non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("expected a {expected} sinogram, got {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("fan does not cover the field of view: D*sin(gamma_max) = {covered:.4} mm < FOV radius {radius:.4} mm")]
    FovViolation { covered: f64, radius: f64 },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("unrecoverable input: {0}")]
    Unrecoverable(String),
    #[error("solver diverged at iteration {iteration}: objective is {objective}")]
    Divergence { iteration: usize, objective: f64 },
}

impl TomoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TomoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        TomoError::DimMismatch(msg.into())
    }

    /// Coarse classification used by front-ends to pick an exit status.
    pub fn category(&self) -> ErrorCategory {
        match self {
            TomoError::Io { .. } => ErrorCategory::Io,
            TomoError::Divergence { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numerical,
}
