use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GgadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GgadError {
    #[error("edge endpoint {node} out of range for {num_nodes} nodes")]
    EndpointOutOfRange { node: usize, num_nodes: usize },
    #[error("feature matrix has {rows} rows, expected {expected}")]
    FeatureShapeMismatch { rows: usize, expected: usize },
    #[error("non-finite feature at node {node}, column {col}")]
    NonFiniteFeature { node: usize, col: usize },
    #[error("node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("anchor node {0} has an empty ego network")]
    EmptyEgoNetwork(usize),
    #[error("affinity requested over an empty node set")]
    EmptySet,
    #[error("no labeled normal node has a neighbor; cannot place outliers")]
    NoEligibleAnchors,
    #[error("forward cache does not match the current parameters")]
    StaleCache,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("metric needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    ParseError { file: PathBuf, line: usize, msg: String },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("insufficient nodes: {0}")]
    InsufficientNodes(String),
    #[error("graph has no labels")]
    MissingLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
