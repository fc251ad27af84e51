use metalearn_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },

    #[error("parameter `{name}`: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{name}` has rank {rank}; {transform} supports rank <= 2")]
    UnsupportedRank {
        name: String,
        rank: usize,
        transform: &'static str,
    },

    #[error("transform changed gradient shape from {input:?} to {output:?}")]
    TransformShape { input: Vec<usize>, output: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("task pipeline: {0}")]
    Pipeline(String),

    #[error("index {index} out of range for {len} tasks")]
    TaskIndex { index: usize, len: usize },

    #[error(transparent)]
    Env(#[from] crate::env::EnvError),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
