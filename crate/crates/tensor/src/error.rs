use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{0} requires a tensor that is tracked on a tape")]
    NotOnTape(&'static str),

    #[error("gradient output must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("operands belong to different tapes")]
    TapeMismatch,

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("container format error: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
