use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid node index {index} in record {record} (node count {node_count})")]
    InvalidNode {
        index: usize,
        record: usize,
        node_count: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("date {0} is outside the series range")]
    DateOutOfRange(chrono::NaiveDate),
    #[error("empty node set: {0}")]
    EmptyNodeSet(&'static str),
    #[error("zero mean degree")]
    ZeroMeanDegree,
    #[error("pair ({i}, {j}) has link probability {q} > 1")]
    ProbabilityDomain { i: usize, j: usize, q: f64 },
    #[error("non-finite belief-propagation message at node {node}")]
    NonFiniteMessage { node: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("all-zero affinity matrix")]
    ZeroAffinity,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
