//! Adversarial training: WGAN-GP objective with reconstruction and
//! feature-matching terms, differentiable augmentation, AdamW with cosine
//! annealing, and deterministic checkpoint/resume.

pub mod augment;
mod config;
mod looper;
pub mod losses;
pub mod optim;

pub use augment::{diff_augment, AugmentDraw};
pub use config::{Result, TrainConfig, TrainError};
pub use looper::{train, EpochStats, TrainOutput, Trainer};
pub use losses::{critic_loss, generator_loss, gradient_penalty};
pub use optim::{cosine_lr, AdamW};
