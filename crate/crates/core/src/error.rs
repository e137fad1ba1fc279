use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (|RᵀR - I| = {orthogonality:e}, det = {determinant})")]
    NotARotation { orthogonality: f64, determinant: f64 },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("scene point cloud is empty")]
    EmptyCloud,

    #[error("malformed PLY header: {0}")]
    PlyHeader(String),

    #[error("PLY element '{element}' declares {declared} entries but only {found} were read")]
    PlyTruncated {
        element: String,
        declared: usize,
        found: usize,
    },

    #[error("malformed PLY body at line {line}: {message}")]
    PlyBody { line: usize, message: String },

    #[error("non-finite coordinate in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("{context}: {cause}")]
    Json {
        context: String,
        cause: serde_json::Error,
    },

    #[error("invalid record in {context}: {message}")]
    Schema { context: String, message: String },

    #[error("degenerate P3P configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("need at least {need} correspondences, got {got}")]
    InsufficientCorrespondences { got: usize, need: usize },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid camera trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("camera trajectory is unrecoverable: only {inliers} inlier estimates survive filtering")]
    UnrecoverableTrajectory { inliers: usize },

    #[error("frame {0} has no valid neighbour")]
    IsolatedFrame(usize),

    #[error("heading correction is ambiguous for anti-parallel tangents")]
    AmbiguousCorrection,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("objective became non-finite ({0})")]
    NonFiniteEnergy(String),

    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("point set is empty")]
    EmptySet,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }

    pub(crate) fn json(context: impl Into<String>, cause: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            cause,
        }
    }
}
