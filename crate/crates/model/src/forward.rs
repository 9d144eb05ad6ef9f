//! Shared forward-pass machinery: forward state, conv units, scSE, and the
//! residual blocks of the generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swigan_tensor::{conv2d, conv2d_transposed, nn, GridTensor, Tape};

use crate::error::Result;
use crate::params::{ConvUnit, ScseParams};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by one batch-norm layer during a training
/// forward; the training loop folds them into the running buffers.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    /// Parameter path of the owning conv unit (e.g. "enc0.conv1").
    pub path: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

pub struct Forward<'a> {
    pub mode: Mode,
    pub tape: Option<&'a Tape>,
    pub rng: &'a mut ChaCha8Rng,
    pub bn_updates: Option<&'a mut Vec<BnUpdate>>,
}

impl<'a> Forward<'a> {
    pub fn train(
        tape: &'a Tape,
        rng: &'a mut ChaCha8Rng,
        bn_updates: &'a mut Vec<BnUpdate>,
    ) -> Self {
        Self {
            mode: Mode::Train,
            tape: Some(tape),
            rng,
            bn_updates: Some(bn_updates),
        }
    }

    pub fn eval(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Eval,
            tape: None,
            rng,
            bn_updates: None,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Record a data tensor as an on-tape constant when a tape is active.
    pub fn constant(&self, t: GridTensor) -> GridTensor {
        match self.tape {
            Some(tape) => tape.constant(&t),
            None => t,
        }
    }

    pub fn standard_normal(&mut self, shape: Vec<usize>) -> GridTensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        self.constant(GridTensor::from_vec(shape, data))
    }
}

pub(crate) struct ConvUnitCfg {
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
    pub activation: bool,
    pub leaky_slope: f32,
    /// Train-mode dropout rate; None for units outside the dropout stages.
    pub dropout: Option<f32>,
}

/// conv -> batch norm -> LeakyReLU -> (+ learnable-scale noise) -> dropout.
///
/// The noise field is one standard-normal H x W draw per sample, shared
/// across channels, injected in both train and eval modes.
pub(crate) fn conv_unit_forward(
    x: &GridTensor,
    unit: &ConvUnit,
    path: &str,
    cfg: &ConvUnitCfg,
    fwd: &mut Forward,
) -> Result<GridTensor> {
    let mut y = if cfg.transposed {
        conv2d_transposed(x, &unit.w, Some(&unit.b), cfg.stride, cfg.pad)?
    } else {
        conv2d(x, &unit.w, Some(&unit.b), cfg.stride, cfg.pad)?
    };

    y = if fwd.is_train() {
        let (out, stats) = nn::batch_norm_train(&y, &unit.bn_gamma, &unit.bn_beta)?;
        if let Some(sink) = fwd.bn_updates.as_deref_mut() {
            sink.push(BnUpdate {
                path: path.to_string(),
                mean: stats.mean,
                var: stats.var,
            });
        }
        out
    } else {
        nn::batch_norm_eval(
            &y,
            &unit.bn_gamma,
            &unit.bn_beta,
            &unit.bn_rmean,
            &unit.bn_rvar,
        )?
    };

    if cfg.activation {
        y = y.leaky_relu(cfg.leaky_slope);
    }

    if let Some(scale) = &unit.noise_scale {
        let shape = y.shape().to_vec();
        let field = fwd.standard_normal(vec![shape[0], 1, shape[2], shape[3]]);
        let scaled = field.mul(&scale.broadcast_to(field.shape().to_vec())?)?;
        y = y.add(&scaled.broadcast_to(shape)?)?;
    }

    if let (Some(rate), true) = (cfg.dropout, fwd.is_train()) {
        y = nn::dropout(&y, rate, true, fwd.rng)?;
    }
    Ok(y)
}

/// Concurrent spatial and channel squeeze-excitation.
///
/// Channel branch: global spatial average -> two-layer bottleneck -> sigmoid,
/// gating each channel. Spatial branch: 1x1 conv over channels -> sigmoid,
/// gating each pixel. The excitations combine by elementwise maximum.
pub fn scse_forward(x: &GridTensor, p: &ScseParams) -> Result<GridTensor> {
    let shape = x.shape().to_vec();
    let (n, c) = (shape[0], shape[1]);

    let pooled = nn::global_avg_pool_spatial(x)?.reshape(vec![n, c])?;
    let hidden = pooled
        .matmul(&p.fc1_w)?
        .add(&p.fc1_b.broadcast_to(vec![n, p.fc1_b.numel()])?)?
        .leaky_relu(0.0);
    let gate_c = hidden
        .matmul(&p.fc2_w)?
        .add(&p.fc2_b.broadcast_to(vec![n, c])?)?
        .sigmoid()
        .reshape(vec![n, c, 1, 1])?
        .broadcast_to(shape.clone())?;

    let gate_s = conv2d(x, &p.sp_w, Some(&p.sp_b), 1, 0)?
        .sigmoid()
        .broadcast_to(shape.clone())?;

    let channel_branch = x.mul(&gate_c)?;
    let spatial_branch = x.mul(&gate_s)?;
    Ok(channel_branch.maximum(&spatial_branch)?)
}

/// Survival probability of residual block l of N (1-based):
/// 1 - (l-1) / (2 (N-1)), i.e. linear from 1.0 down to 0.5. The decoder uses
/// the mirrored schedule.
pub fn survival_schedule(
    l: usize,
    n: usize,
) -> std::result::Result<f32, crate::config::ConfigError> {
    if n < 2 {
        return Err(crate::config::ConfigError::Invalid(format!(
            "stochastic depth needs at least 2 blocks, got {n}"
        )));
    }
    if l < 1 || l > n {
        return Err(crate::config::ConfigError::Invalid(format!(
            "block index {l} out of 1..={n}"
        )));
    }
    Ok(1.0 - (l - 1) as f32 / (2 * (n - 1)) as f32)
}

/// Whether the main branch runs this pass. In eval mode all blocks run;
/// in train mode the branch survives with probability `p`.
pub fn main_branch_survives(p: f32, fwd: &mut Forward) -> bool {
    if !fwd.is_train() {
        return true;
    }
    fwd.rng.gen::<f32>() < p
}
