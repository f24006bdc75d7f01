use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("node {0} is not a valid node")]
    InvalidNode(usize),
    #[error("graph has no valid nodes")]
    EmptyGraph,
    #[error("zero-norm feature vector: {0}")]
    ZeroNorm(String),
    #[error("ground-truth adjacency is not available")]
    MissingGroundTruth,
    #[error("graph with {0} nodes is too large for brute force")]
    TooLarge(usize),
    #[error("need at least {needed} locations, got {got}")]
    TooFewNodes { needed: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("world generation failed: {0}")]
    Generation(String),
    #[error("cell ({0}, {1}) is blocked or outside the grid")]
    BlockedCell(usize, usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no evaluation pairs left after filtering")]
    NoPairs,
    #[error("invalid configuration: {0}")]
    Config(String),
}
