use std::path::PathBuf;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("graph input `{0}` is not bound")]
    Unbound(String),

    #[error("node {node} must evaluate to a scalar, got shape {shape:?}")]
    NotScalar { node: usize, shape: Vec<usize> },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("parameter layout mismatch: expected `{expected}`, found `{found}`")]
    Layout { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("client {0} has no examples")]
    EmptyClient(u64),

    #[error("token id {token} outside vocabulary of size {size}")]
    UnknownToken { token: usize, size: usize },

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    #[error("invalid record for client {client}: {detail}")]
    InvalidRecord { client: u64, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure in round {round}: {source}")]
    Numerical {
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by NaN/Inf during numerical work.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numerical { .. })
    }
}
