//! SwiGAN model components: the UNet generator and the frame+patch critic.

pub mod config;
pub mod critic;
mod error;
pub mod forward;
pub mod generator;
pub mod params;

pub use config::{ConfigError, ConvSpec, CriticConfig, CriticExtents, GeneratorConfig, StagePlan};
pub use critic::{critic_forward, spectral_normalize, CriticOutput};
pub use error::{ModelError, Result};
pub use forward::{main_branch_survives, scse_forward, survival_schedule, BnUpdate, Forward, Mode};
pub use generator::{
    assemble_input, decoder_block, decoder_has_dropout, encoder_block, encoder_has_dropout,
    generator_forward, generator_forward_with_noise, generator_shape_walk, ContextBatch, ShapeWalk,
};
pub use params::{CriticParams, GeneratorParams, ParamKind, ParamSet, SnConv};
