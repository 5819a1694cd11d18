use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could be read but its contents are not an accepted format.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pixel ({row}, {col}) is outside the {rows}x{cols} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("ring {ring} around ({row}, {col}) is empty after clipping")]
    EmptyRing { row: usize, col: usize, ring: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid sparse matrix: {0}")]
    InvalidMatrix(String),

    #[error("eigensolver did not converge after {matvecs} matvecs (worst residual {residual:.3e})")]
    NotConverged { matvecs: usize, residual: f64 },

    #[error("spectrally empty graph: every retained eigenvalue is non-positive")]
    SpectrallyEmpty,

    #[error("node {0} has no incident edges")]
    IsolatedNode(usize),

    #[error("principal eigenvector vanishes at node {0} (reducible graph)")]
    ReducibleGraph(usize),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("infeasible anomaly gap: {0}")]
    InfeasibleGap(String),

    #[error("invalid ground truth: {0}")]
    GroundTruth(String),

    #[error("corpus contains no ground-truth targets")]
    NoPositives,

    #[error("{context}: {source}")]
    Json {
        context: String,
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

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
