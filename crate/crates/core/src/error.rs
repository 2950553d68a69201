use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Infeasible,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Input => 2,
            ErrorClass::Infeasible => 3,
            ErrorClass::Internal => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Input => "input",
            ErrorClass::Infeasible => "infeasible",
            ErrorClass::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("consistency error ({context}): {message}")]
    Consistency { context: String, message: String },

    #[error("malformed cuts for model {model}: {message}")]
    MalformedCuts { model: String, message: String },

    #[error("bad file format {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate similarity input: centered matrix has Frobenius norm {norm:e}")]
    DegenerateSimilarity { norm: f64 },

    #[error("missing similarity table entry: model {model_a} node {node_a} vs model {model_b} node {node_b}")]
    MissingEntry {
        model_a: usize,
        node_a: usize,
        model_b: usize,
        node_b: usize,
    },

    #[error("model {model} has {nodes} nodes, fewer than K={k}")]
    TooFewNodes { model: String, nodes: usize, k: usize },

    #[error("no K={k} cut of model {model} satisfies the block size bound with eps={eps}")]
    InfeasibleSizeBound { model: String, k: usize, eps: f64 },

    #[error("equivalence set {set} is empty")]
    DegenerateClustering { set: usize },

    #[error("all {restarts} restarts ended in degenerate clustering")]
    AllRestartsDegenerate { restarts: usize },

    #[error("candidate cannot be scored: {0}")]
    Unscorable(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("instance too large for exhaustive search: {configurations} configurations exceed {limit}")]
    InstanceTooLarge { configurations: u128, limit: u128 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn consistency(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Consistency {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Consistency { .. }
            | Error::MalformedCuts { .. }
            | Error::Format { .. }
            | Error::InvalidArgument(_)
            | Error::MissingEntry { .. }
            | Error::TooFewNodes { .. }
            | Error::Unscorable(_)
            | Error::DimensionMismatch(_)
            | Error::InstanceTooLarge { .. }
            | Error::Json(_) => ErrorClass::Input,
            Error::InfeasibleSizeBound { .. } => ErrorClass::Infeasible,
            Error::DegenerateSimilarity { .. }
            | Error::DegenerateClustering { .. }
            | Error::AllRestartsDegenerate { .. } => ErrorClass::Internal,
        }
    }
}
