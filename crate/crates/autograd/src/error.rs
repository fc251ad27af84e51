use thiserror::Error;

/// Errors raised by tensor construction, arithmetic and differentiation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),

    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("output is detached from the differentiation graph")]
    Detached,

    #[error("input {0} does not require grad")]
    InputNotDifferentiable(usize),

    #[error("class target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;
