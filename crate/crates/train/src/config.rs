use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] swigan_model::ModelError),

    #[error(transparent)]
    Tensor(#[from] swigan_tensor::TensorError),

    #[error(transparent)]
    Data(#[from] swigan_data::DataError),

    #[error("non-finite loss at epoch {epoch} step {step} (critic {critic_loss}, generator {gen_loss}); offending batch targets {batch:?}")]
    NanLoss {
        epoch: usize,
        step: usize,
        critic_loss: f32,
        gen_loss: f32,
        batch: Vec<usize>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_pen: f32,
    pub lambda_rec: f32,
    pub lambda_feat: f32,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
    /// Checkpoint every N epochs (0 disables intermediate checkpoints);
    /// the final state is always checkpointed by the CLI.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_pen: 10.0,
            lambda_rec: 100.0,
            lambda_feat: 10.0,
            critic_steps: 5,
            batch_size: 64,
            epochs: 1500,
            lr: 1e-5,
            weight_decay: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: minutes, not days. Loss weights, critic schedule
    /// and optimizer shape stay at their full-scale values; only size and
    /// learning rate change.
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            epochs: 300,
            lr: 2e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_pen < 0.0 || self.lambda_rec < 0.0 || self.lambda_feat < 0.0 {
            return Err(TrainError::Config(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.critic_steps == 0 {
            return Err(TrainError::Config("critic_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("betas must lie in [0, 1)".into()));
        }
        if self.lr <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}
