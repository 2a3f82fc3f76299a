use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance is not symmetric (relative asymmetry {0:.3e})")]
    AsymmetricCovariance(f64),

    #[error("covariance is singular even after regularization")]
    SingularCovariance,

    #[error("voxelization produced no voxel with enough points")]
    EmptyGrid,

    #[error("voxel index {0:?} does not fit in the 21-bit key encoding")]
    KeyOverflow([i64; 3]),

    #[error("no correspondence survived gating")]
    NoCorrespondences,

    #[error("non-finite derivative (degenerate correspondence)")]
    NonFiniteDerivative,

    #[error("Hessian factorization failed after regularization reached {0:.1e}")]
    FactorizationFailed(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: size {size} bytes is not a multiple of 16")]
    MalformedSize { path: PathBuf, size: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("trajectory too short for evaluation: {0}")]
    TooShort(String),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("trajectory length mismatch: {estimated} estimated vs {truth} ground-truth poses")]
    LengthMismatch { estimated: usize, truth: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AsymmetricCovariance(_) => "asymmetric-covariance",
            Error::SingularCovariance => "singular-covariance",
            Error::EmptyGrid => "empty-grid",
            Error::KeyOverflow(_) => "key-overflow",
            Error::NoCorrespondences => "no-correspondences",
            Error::NonFiniteDerivative => "non-finite-derivative",
            Error::FactorizationFailed(_) => "factorization-failed",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::MalformedSize { .. } => "malformed-size",
            Error::Parse { .. } => "parse",
            Error::TooShort(_) => "too-short",
            Error::DegenerateAlignment(_) => "degenerate-alignment",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Wraps an I/O error with the path it concerns.
    pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
