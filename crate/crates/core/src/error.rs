use std::path::PathBuf;

use thiserror::Error;

use crate::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty score vector")]
    EmptyScores,
    #[error("non-finite score at index {index}: {value}")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("unsupported entropy index {0} (must be >= 1)")]
    UnsupportedEntropyIndex(f64),

    #[error("no neighbors")]
    NoNeighbors,
    #[error("unknown neighbor {0}")]
    UnknownNeighbor(NodeId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state component from node {node}")]
    NonFiniteState { node: NodeId },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("missing message from neighbor {neighbor} at node {node}")]
    MissingMessage { node: NodeId, neighbor: NodeId },
    #[error("repc baseline not provided")]
    RepcNotProvided,
    #[error("attack spec violates declared bound: node {node} emitted norm {norm} > {bound}")]
    AttackBoundViolated { node: NodeId, norm: f64, bound: f64 },

    #[error("no admissible topology found after {attempts} attempts")]
    NoAdmissibleTopology { attempts: usize },
    #[error("graph parse error at line {line}: {reason}")]
    GraphParse { line: usize, reason: String },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("lemma stated for λ=0")]
    LemmaRequiresZeroForgetting,
    #[error("check not applicable: {0}")]
    NotApplicable(String),
    #[error("fit needs more than {needed} usable rounds, found {found}")]
    InsufficientTrace { needed: usize, found: usize },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("wire protocol error: {0}")]
    Protocol(String),
    #[error("node process failed: {0}")]
    NodeFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
