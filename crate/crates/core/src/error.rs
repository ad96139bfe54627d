use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("shape inference failed at layer `{layer}`: expected {expected}, got {actual}")]
    ShapeInference {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("parameter shape mismatch for layer `{layer}`: expected {expected:?}, found {found:?}")]
    ParamMismatch {
        layer: String,
        expected: Vec<Vec<usize>>,
        found: Vec<Vec<usize>>,
    },

    #[error("missing parameters for layer `{0}`")]
    MissingParams(String),

    #[error("backward requires a forward pass run with state retention")]
    NoForwardState,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("surgery rejected: {0}")]
    Surgery(String),

    #[error("degenerate probe: {0}")]
    DegenerateProbe(String),

    #[error("{path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
