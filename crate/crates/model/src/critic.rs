//! Three-part critic: a shared spectrally-normalized base feeding a frame
//! head (whole-map score) and a patch head (local-tile scores), combined as
//! frame + mean(patch grid).

use swigan_tensor::{concat_channels, conv2d, nn, GridTensor, Tape};

use crate::error::{ModelError, Result};
use crate::params::{CriticParams, SnConv};

pub struct CriticOutput {
    /// One Wasserstein score per sample, shape [N].
    pub score: GridTensor,
    /// Base-network output features [N, C, h, w]; the feature-matching loss
    /// consumes these.
    pub features: GridTensor,
}

/// Divide a weight by its spectral-norm estimate u^T W v, with (u, v) taken
/// as constants. Differentiable with respect to the weight. A zero weight
/// comes back unchanged via the 1e-12 floor.
fn sn_weight(conv: &SnConv, tape: Option<&Tape>) -> Result<GridTensor> {
    let shape = conv.w.shape().to_vec();
    let out = shape[0];
    let rest: usize = shape[1..].iter().product();
    let constant = |t: &GridTensor| match tape {
        Some(tp) => tp.constant(t),
        None => t.clone(),
    };
    let u = constant(&conv.u).reshape(vec![1, out])?;
    let v = constant(&conv.v).reshape(vec![rest, 1])?;
    let wm = conv.w.reshape(vec![out, rest])?;
    let sigma = u.matmul(&wm)?.matmul(&v)?.reshape(vec![1])?;
    let floor = constant(&GridTensor::from_vec(vec![1], vec![1e-12]));
    let inv = sigma.maximum(&floor)?.powf(-1.0);
    Ok(conv.w.mul(&inv.broadcast_to(shape)?)?)
}

/// One power-iteration step on persistent (u, v) state, then the weight
/// divided by the sigma estimate. After warm-up the estimate sits within a
/// few percent of the true largest singular value.
pub fn spectral_normalize(conv: &mut SnConv) -> Result<GridTensor> {
    conv.power_iterate();
    sn_weight(conv, None)
}

fn run_stack(
    specs: &[crate::config::ConvSpec],
    params: &[SnConv],
    mut x: GridTensor,
    slope: f32,
    tape: Option<&Tape>,
) -> Result<GridTensor> {
    for (spec, conv) in specs.iter().zip(params) {
        let w = if spec.spectral_norm {
            sn_weight(conv, tape)?
        } else {
            conv.w.clone()
        };
        x = conv2d(&x, &w, Some(&conv.b), spec.stride, spec.padding)?;
        if spec.instance_norm {
            let (g, b) = (
                conv.in_gamma.as_ref().expect("norm layer has gamma"),
                conv.in_beta.as_ref().expect("norm layer has beta"),
            );
            x = nn::instance_norm(&x, g, b)?;
        }
        if spec.activation {
            x = x.leaky_relu(slope);
        }
    }
    Ok(x)
}

/// D(i | c) = frame(base(i,c)) + mean over the patch head's score grid.
/// The context stack is channel-concatenated to the tested map. A frame head
/// whose realized extent exceeds 1x1 is averaged to a scalar (the realized
/// extents live in the run manifest).
pub fn critic_forward(
    p: &CriticParams,
    map: &GridTensor,
    context: &GridTensor,
    tape: Option<&Tape>,
) -> Result<CriticOutput> {
    let ms = map.shape();
    let cs = context.shape();
    if ms.len() != 4 || cs.len() != 4 || ms[0] != cs[0] || ms[2..] != cs[2..] {
        return Err(ModelError::Forward(format!(
            "map {ms:?} and context {cs:?} are not spatially aligned"
        )));
    }
    if ms[1] + cs[1] != p.in_channels {
        return Err(ModelError::Forward(format!(
            "critic expects {} input channels, got {}",
            p.in_channels,
            ms[1] + cs[1]
        )));
    }
    let n = ms[0];
    let slope = p.cfg.leaky_slope;

    let x = concat_channels(&[map, context])?;
    let features = run_stack(&p.cfg.base, &p.base, x, slope, tape)?;
    let frame = run_stack(&p.cfg.frame, &p.frame, features.clone(), slope, tape)?;
    let patch = run_stack(&p.cfg.patch, &p.patch, features.clone(), slope, tape)?;

    let spatial_mean = |t: &GridTensor| -> Result<GridTensor> {
        let count: usize = t.shape()[1..].iter().product();
        Ok(t.sum_axes(&[1, 2, 3])?
            .scale(1.0 / count as f32)
            .reshape(vec![n])?)
    };
    let score = spatial_mean(&frame)?.add(&spatial_mean(&patch)?)?;
    Ok(CriticOutput { score, features })
}
