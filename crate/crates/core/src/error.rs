use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}:{column}: {message}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("node index {index} out of range for graph with {n_nodes} nodes")]
    IndexOutOfRange { index: usize, n_nodes: usize },

    #[error("self-loop on node {node} is not allowed")]
    SelfLoop { node: usize },

    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),

    #[error("invalid neighbour count k={k} for {n_nodes} nodes")]
    InvalidK { k: usize, n_nodes: usize },

    #[error("cosine distance undefined: node {node} has an all-zero feature row")]
    ZeroVector { node: usize },

    #[error("adjacency is not symmetric at ({i}, {j})")]
    AsymmetricInput { i: usize, j: usize },

    #[error("adjacency has a negative entry at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize },

    #[error("infeasible perturbation: {0}")]
    InfeasibleSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("smoothing probabilities must lie in (0, 1): {0}")]
    InvalidSmoothing(String),

    #[error("distributions have mismatched support: {left} vs {right} pairs")]
    MismatchedSupport { left: usize, right: usize },

    #[error("{pairs} node pairs is too many to enumerate (limit {limit})")]
    TooLargeToEnumerate { pairs: usize, limit: usize },

    #[error("objective became non-finite at epoch {epoch}")]
    NonFiniteObjective { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint does not match dataset: {0}")]
    CheckpointMismatch(String),

    #[error("every grid cell failed")]
    AllCellsFailed,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Variant name, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedFile { .. } => "MalformedFile",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::SelfLoop { .. } => "SelfLoop",
            Error::InconsistentDimensions(_) => "InconsistentDimensions",
            Error::InvalidK { .. } => "InvalidK",
            Error::ZeroVector { .. } => "ZeroVector",
            Error::AsymmetricInput { .. } => "AsymmetricInput",
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::InfeasibleSpec(_) => "InfeasibleSpec",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyMask => "EmptyMask",
            Error::InvalidSmoothing(_) => "InvalidSmoothing",
            Error::MismatchedSupport { .. } => "MismatchedSupport",
            Error::TooLargeToEnumerate { .. } => "TooLargeToEnumerate",
            Error::NonFiniteObjective { .. } => "NonFiniteObjective",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::CheckpointMismatch(_) => "CheckpointMismatch",
            Error::AllCellsFailed => "AllCellsFailed",
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
        }
    }

    /// File the error refers to, when there is one.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::MalformedFile { path, .. } | Error::Io { path, .. } => Some(path),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
