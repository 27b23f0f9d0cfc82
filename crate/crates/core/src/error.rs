use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter name {0:?} registered twice")]
    DuplicateParam(String),

    #[error("planar flow hyperplane normal w has zero norm")]
    ZeroW,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad IDX format: {0}")]
    Format(String),

    #[error("truncated IDX payload: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("label {value} at index {index} is outside 0..=9")]
    LabelRange { index: usize, value: u8 },

    #[error("dataset is empty")]
    EmptySet,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("latent dimension must be {expected} for this command, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite loss at iteration {iter}")]
    NanLoss { iter: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
