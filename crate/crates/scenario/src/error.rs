use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("projection error: {0}")]
    Projection(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("importance error: {0}")]
    Importance(String),

    #[error(transparent)]
    Model(#[from] swigan_model::ModelError),

    #[error(transparent)]
    Tensor(#[from] swigan_tensor::TensorError),

    #[error(transparent)]
    Data(#[from] swigan_data::DataError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;
