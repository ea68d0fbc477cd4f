use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid graph `{id}`: {msg}")]
    InvalidGraph { id: String, msg: String },

    #[error("graph `{id}` uses reserved label 0 at node {node}")]
    ReservedLabel { id: String, node: usize },

    #[error("node index {index} out of range for graph with {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },

    #[error("graph with {nodes} nodes exceeds the size guard of {guard}")]
    SizeGuard { nodes: usize, guard: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("frame of size {frame} exceeds the matcher limit {limit}")]
    FrameTooLarge { frame: usize, limit: usize },

    #[error("label id {label} outside embedding table of {rows} rows")]
    UnknownLabel { label: usize, rows: usize },

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("frozen parameter group `{0}` is marked trainable")]
    FrozenGroupTrainable(&'static str),

    #[error("missing target on graph `{0}`")]
    MissingTarget(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
