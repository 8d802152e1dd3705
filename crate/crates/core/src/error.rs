use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, expected `FBPRASTER 1`")]
    BadMagic { path: PathBuf },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: truncated payload, expected {expected} bytes but found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: dimensions {height}x{width} overflow the addressable payload size")]
    DimensionOverflow {
        path: PathBuf,
        height: u64,
        width: u64,
    },

    #[error("data length {len} does not match {height}x{width}")]
    ShapeMismatch {
        height: usize,
        width: usize,
        len: usize,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry of the sinogram does not match the requested geometry")]
    GeometryMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: &'static str },

    #[error("imaginary residue {residue:e} exceeds tolerance {tolerance:e}; the filter is not Hermitian")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("unknown filter `{name}`; valid names are: {valid}")]
    UnknownFilter { name: String, valid: String },

    #[error("normal equations are rank deficient after ridge regularization")]
    RankDeficient,

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
