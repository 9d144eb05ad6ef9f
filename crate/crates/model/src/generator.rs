//! The UNet generator: five (configurable) encoder stages, a center block,
//! and mirrored decoder stages with skip connections.

use std::sync::Arc;

use swigan_data::ClimateDataset;
use swigan_tensor::{concat_channels, conv2d, conv2d_transposed, nn, GridTensor};

use crate::error::{ModelError, Result};
use crate::forward::{
    conv_unit_forward, main_branch_survives, scse_forward, survival_schedule, ConvUnitCfg, Forward,
};
use crate::params::{DecoderStage, EncoderStage, GeneratorParams};

/// A batch of conditioning contexts: covariate/lag channels on the raw grid
/// plus each sample's calendar month (1..=12). Noise and the month embedding
/// are appended inside the generator.
#[derive(Clone, Debug)]
pub struct ContextBatch {
    /// [N, (u+1) n_cov + u, grid_h, grid_w]
    pub channels: GridTensor,
    pub months: Vec<u32>,
}

impl ContextBatch {
    pub fn from_dataset(ds: &ClimateDataset, targets: &[usize], u: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(ModelError::Forward("empty context batch".into()));
        }
        let plane = ds.plane();
        let c = ds.context_channel_count(u);
        let mut data = Vec::with_capacity(targets.len() * c * plane);
        let mut months = Vec::with_capacity(targets.len());
        for &t in targets {
            data.extend_from_slice(&ds.context_channels(t, u));
            months.push(ds.month(t).month);
        }
        Ok(Self {
            channels: GridTensor::from_vec(vec![targets.len(), c, ds.grid_h, ds.grid_w], data),
            months,
        })
    }

    /// Build a batch from raw channel stacks (used by the projection engine,
    /// which assembles lag channels from its own rolling state).
    pub fn from_raw(channels: GridTensor, months: Vec<u32>) -> Result<Self> {
        if channels.shape().len() != 4 || channels.shape()[0] != months.len() {
            return Err(ModelError::Forward(format!(
                "context channels {:?} do not match {} months",
                channels.shape(),
                months.len()
            )));
        }
        Ok(Self { channels, months })
    }

    pub fn batch_size(&self) -> usize {
        self.months.len()
    }

    /// The target rasters for these contexts, as an [N,1,H,W] tensor.
    pub fn targets_tensor(ds: &ClimateDataset, targets: &[usize]) -> GridTensor {
        let plane = ds.plane();
        let mut data = Vec::with_capacity(targets.len() * plane);
        for &t in targets {
            data.extend_from_slice(ds.index.raster(t));
        }
        GridTensor::from_vec(vec![targets.len(), 1, ds.grid_h, ds.grid_w], data)
    }
}

/// Assemble the full generator input: padded context channels, the month
/// embedding broadcast to the padded extent, and the noise vector broadcast
/// one channel per component.
pub fn assemble_input(
    p: &GeneratorParams,
    ctx: &ContextBatch,
    noise: &GridTensor,
    fwd: &Forward,
) -> Result<GridTensor> {
    let cfg = &p.cfg;
    let n = ctx.batch_size();
    let expect_c = (cfg.lag_u + 1) * cfg.n_covariates + cfg.lag_u;
    let shape = ctx.channels.shape();
    if shape != [n, expect_c, cfg.grid_h, cfg.grid_w] {
        return Err(ModelError::Forward(format!(
            "context channels {:?}, expected [{n}, {expect_c}, {}, {}]",
            shape, cfg.grid_h, cfg.grid_w
        )));
    }
    if noise.shape() != [n, cfg.noise_dim] {
        return Err(ModelError::Forward(format!(
            "noise {:?}, expected [{n}, {}]",
            noise.shape(),
            cfg.noise_dim
        )));
    }
    let pad = cfg.padded;

    // Record as a constant unless the caller already tracks the channels
    // (gradient checks differentiate with respect to the context).
    let ctx_t = if ctx.channels.is_tracked() {
        ctx.channels.clone()
    } else {
        fwd.constant(ctx.channels.clone())
    };
    let padded = nn::zero_pad_center(&ctx_t, pad, pad)?;

    // month embedding rows -> [N, E] -> constant channels
    let e = cfg.embed_dim;
    let mut map = Vec::with_capacity(n * e);
    for &m in &ctx.months {
        if !(1..=12).contains(&m) {
            return Err(ModelError::Forward(format!("month {m} out of range")));
        }
        for j in 0..e {
            map.push(((m as usize - 1) * e + j) as i64);
        }
    }
    let embed = p
        .embed
        .gather(&Arc::new(map), vec![n, e])?
        .reshape(vec![n, e, 1, 1])?
        .broadcast_to(vec![n, e, pad, pad])?;

    let noise_b = noise
        .reshape(vec![n, cfg.noise_dim, 1, 1])?
        .broadcast_to(vec![n, cfg.noise_dim, pad, pad])?;

    Ok(concat_channels(&[&padded, &embed, &noise_b])?)
}

/// Dropout lives in exactly the last three encoder blocks...
pub fn encoder_has_dropout(stage: usize, n_stages: usize) -> bool {
    stage + 3 >= n_stages
}

/// ...and the first three decoder blocks.
pub fn decoder_has_dropout(stage: usize) -> bool {
    stage < 3
}

/// Encoder residual block: 1x1 projection shortcut; main branch of two 3x3
/// conv units, scSE attention, residual add. In train mode the main branch
/// is skipped with probability 1 - survival.
pub fn encoder_block(
    x: &GridTensor,
    st: &EncoderStage,
    path: &str,
    survival: f32,
    dropout: Option<f32>,
    slope: f32,
    fwd: &mut Forward,
) -> Result<GridTensor> {
    let shortcut = conv2d(x, &st.proj_w, None, 1, 0)?;
    if !main_branch_survives(survival, fwd) {
        return Ok(shortcut);
    }
    let cfg3 = ConvUnitCfg {
        stride: 1,
        pad: 1,
        transposed: false,
        activation: true,
        leaky_slope: slope,
        dropout,
    };
    let h = conv_unit_forward(x, &st.conv1, &format!("{path}.conv1"), &cfg3, fwd)?;
    let h = conv_unit_forward(&h, &st.conv2, &format!("{path}.conv2"), &cfg3, fwd)?;
    let h = scse_forward(&h, &st.scse)?;
    Ok(shortcut.add(&h)?)
}

/// Decoder residual block. The upscaling transposed conv is the shortcut;
/// the main branch upsamples with its own transposed conv, concatenates the
/// matching encoder skip, applies two 3x3 conv units and scSE, then adds the
/// shortcut.
#[allow(clippy::too_many_arguments)]
pub fn decoder_block(
    x: &GridTensor,
    skip: &GridTensor,
    st: &DecoderStage,
    path: &str,
    survival: f32,
    zero_pad: usize,
    dropout: Option<f32>,
    slope: f32,
    fwd: &mut Forward,
) -> Result<GridTensor> {
    let mut shortcut = conv2d_transposed(x, &st.short_w, Some(&st.short_b), 2, 0)?;
    if zero_pad > 0 {
        shortcut = shortcut.pad2d([0, zero_pad, 0, zero_pad])?;
    }
    if !main_branch_survives(survival, fwd) {
        return Ok(shortcut);
    }
    let up_cfg = ConvUnitCfg {
        stride: 2,
        pad: 0,
        transposed: true,
        activation: true,
        leaky_slope: slope,
        dropout,
    };
    let mut h = conv_unit_forward(x, &st.up, &format!("{path}.up"), &up_cfg, fwd)?;
    if zero_pad > 0 {
        h = h.pad2d([0, zero_pad, 0, zero_pad])?;
    }
    let h = concat_channels(&[&h, skip])?;
    let cfg3 = ConvUnitCfg {
        stride: 1,
        pad: 1,
        transposed: false,
        activation: true,
        leaky_slope: slope,
        dropout,
    };
    let h = conv_unit_forward(&h, &st.conv1, &format!("{path}.conv1"), &cfg3, fwd)?;
    let h = conv_unit_forward(&h, &st.conv2, &format!("{path}.conv2"), &cfg3, fwd)?;
    let h = scse_forward(&h, &st.scse)?;
    Ok(shortcut.add(&h)?)
}

/// Full generator forward: returns the generated index maps
/// [N, 1, grid_h, grid_w] in normalized space. Draws the noise vector and
/// all injected noise fields from `fwd.rng`.
pub fn generator_forward(
    p: &GeneratorParams,
    ctx: &ContextBatch,
    fwd: &mut Forward,
) -> Result<GridTensor> {
    let n = ctx.batch_size();
    let noise = fwd.standard_normal(vec![n, p.cfg.noise_dim]);
    generator_forward_with_noise(p, ctx, &noise, fwd)
}

/// Forward with an explicit noise vector [N, noise_dim] (tests pin it).
pub fn generator_forward_with_noise(
    p: &GeneratorParams,
    ctx: &ContextBatch,
    noise: &GridTensor,
    fwd: &mut Forward,
) -> Result<GridTensor> {
    let cfg = &p.cfg;
    let n_stages = cfg.n_stages();
    let slope = cfg.leaky_slope;

    let mut x = assemble_input(p, ctx, noise, fwd)?;

    let mut skips: Vec<GridTensor> = Vec::with_capacity(n_stages);
    for (k, st) in p.encoder.iter().enumerate() {
        // dropout lives in the last three encoder blocks
        let dropout = encoder_has_dropout(k, n_stages).then_some(cfg.dropout_rate);
        let survival = survival_schedule(k + 1, n_stages)?;
        let block = encoder_block(&x, st, &format!("enc{k}"), survival, dropout, slope, fwd)?;
        let down_cfg = ConvUnitCfg {
            stride: 2,
            pad: 0,
            transposed: false,
            activation: true,
            leaky_slope: slope,
            dropout: None,
        };
        x = conv_unit_forward(&block, &st.down, &format!("enc{k}.down"), &down_cfg, fwd)?;
        skips.push(block);
    }

    let center_cfg = |act: bool| ConvUnitCfg {
        stride: 1,
        pad: 0,
        transposed: false,
        activation: act,
        leaky_slope: slope,
        dropout: None,
    };
    x = conv_unit_forward(&x, &p.center1, "center.conv1", &center_cfg(true), fwd)?;
    x = conv_unit_forward(&x, &p.center2, "center.conv2", &center_cfg(false), fwd)?;

    for (k, st) in p.decoder.iter().enumerate() {
        // dropout lives in the first three decoder blocks
        let dropout = decoder_has_dropout(k).then_some(cfg.dropout_rate);
        let survival = survival_schedule(n_stages - k, n_stages)?;
        let skip = &skips[n_stages - 1 - k];
        x = decoder_block(
            &x,
            skip,
            st,
            &format!("dec{k}"),
            survival,
            p.plan.decoder[k].zero_pad,
            dropout,
            slope,
            fwd,
        )?;
    }

    let y = conv2d(&x, &p.head_w, Some(&p.head_b), 1, 0)?;
    Ok(nn::center_crop(&y, cfg.grid_h, cfg.grid_w)?)
}

/// Like `generator_forward`, but returns every intermediate extent for shape
/// validation against the architecture tables.
pub fn generator_shape_walk(p: &GeneratorParams, ctx: &ContextBatch) -> Result<ShapeWalk> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut fwd = Forward::eval(&mut rng);
    let noise = GridTensor::zeros(vec![ctx.batch_size(), p.cfg.noise_dim]);

    let mut walk = ShapeWalk::default();
    let mut x = assemble_input(p, ctx, &noise, &fwd)?;
    walk.input = x.shape().to_vec();
    let n_stages = p.cfg.n_stages();
    let mut skips = Vec::new();
    for st in &p.encoder {
        let block = encoder_block(&x, st, "walk", 1.0, None, p.cfg.leaky_slope, &mut fwd)?;
        walk.encoder_blocks.push(block.shape().to_vec());
        let down_cfg = ConvUnitCfg {
            stride: 2,
            pad: 0,
            transposed: false,
            activation: true,
            leaky_slope: p.cfg.leaky_slope,
            dropout: None,
        };
        x = conv_unit_forward(&block, &st.down, "walk", &down_cfg, &mut fwd)?;
        walk.encoder_downs.push(x.shape().to_vec());
        skips.push(block);
    }
    let center_cfg = ConvUnitCfg {
        stride: 1,
        pad: 0,
        transposed: false,
        activation: true,
        leaky_slope: p.cfg.leaky_slope,
        dropout: None,
    };
    x = conv_unit_forward(&x, &p.center1, "walk", &center_cfg, &mut fwd)?;
    x = conv_unit_forward(&x, &p.center2, "walk", &center_cfg, &mut fwd)?;
    walk.center = x.shape().to_vec();
    for (k, st) in p.decoder.iter().enumerate() {
        x = decoder_block(
            &x,
            &skips[n_stages - 1 - k],
            st,
            "walk",
            1.0,
            p.plan.decoder[k].zero_pad,
            None,
            p.cfg.leaky_slope,
            &mut fwd,
        )?;
        walk.decoder_blocks.push(x.shape().to_vec());
    }
    let y = conv2d(&x, &p.head_w, Some(&p.head_b), 1, 0)?;
    let y = nn::center_crop(&y, p.cfg.grid_h, p.cfg.grid_w)?;
    walk.head = y.shape().to_vec();
    Ok(walk)
}

#[derive(Default, Debug)]
pub struct ShapeWalk {
    pub input: Vec<usize>,
    pub encoder_blocks: Vec<Vec<usize>>,
    pub encoder_downs: Vec<Vec<usize>>,
    pub center: Vec<usize>,
    pub decoder_blocks: Vec<Vec<usize>>,
    pub head: Vec<usize>,
}
