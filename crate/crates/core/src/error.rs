use thiserror::Error;

use crate::graph::GraphError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid sampling distribution at node {node}: {reason}")]
    InvalidDistribution { node: usize, reason: String },
    #[error("computation graph depth {found} does not match model depth {expected}")]
    DepthMismatch { expected: usize, found: usize },
    #[error("node {0} has no neighbors")]
    EmptyNeighborhood(usize),
    #[error("node {child} is not a neighbor of {parent}")]
    NotNeighbor { parent: usize, child: usize },
    #[error("sensitive group {0} is empty")]
    EmptyGroup(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("probability row {row} does not sum to one")]
    NotNormalized { row: usize },
    #[error("node {0} has no label")]
    Unlabeled(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
