use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Tensor(#[from] swigan_tensor::TensorError),

    #[error("parameter load error: {0}")]
    Load(String),

    #[error("forward error: {0}")]
    Forward(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
