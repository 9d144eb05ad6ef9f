//! Composite neural-net primitives built on the core op set. Everything here
//! inherits differentiability (including double backward) from the ops it is
//! composed of.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::GridTensor;

pub const NORM_EPS: f32 = 1e-5;

/// Mean over the listed axes, keeping them as size-1 dims.
pub fn mean_axes(x: &GridTensor, axes: &[usize]) -> Result<GridTensor> {
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    Ok(x.sum_axes(axes)?.scale(1.0 / count as f32))
}

/// Instance normalization over [N,C,H,W]: each sample's each channel is
/// normalized over its spatial extent to mean 0, variance 1 (eps 1e-5),
/// then scaled by gamma and shifted by beta (both [C]).
pub fn instance_norm(x: &GridTensor, gamma: &GridTensor, beta: &GridTensor) -> Result<GridTensor> {
    normalize_over(x, &[2, 3], gamma, beta)
}

/// Batch-norm statistics for one forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Batch normalization in training mode: normalizes over (N,H,W) per channel
/// with the batch statistics, returning them so the caller can fold them into
/// running estimates.
pub fn batch_norm_train(
    x: &GridTensor,
    gamma: &GridTensor,
    beta: &GridTensor,
) -> Result<(GridTensor, BatchStats)> {
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return Err(shape_err("batch_norm", format!("{:?}", shape)));
    }
    let count = (shape[0] * shape[2] * shape[3]) as f32;
    let mean = x.sum_axes(&[0, 2, 3])?.scale(1.0 / count);
    let centered = x.sub(&mean.broadcast_to(shape.clone())?)?;
    let var = centered
        .mul(&centered)?
        .sum_axes(&[0, 2, 3])?
        .scale(1.0 / count);
    let stats = BatchStats {
        mean: mean.to_vec(),
        var: var.to_vec(),
    };
    let inv_std = var.add_scalar(NORM_EPS).powf(-0.5);
    let xhat = centered.mul(&inv_std.broadcast_to(shape.clone())?)?;
    let out = affine_channels(&xhat, gamma, beta)?;
    Ok((out, stats))
}

/// Batch normalization in eval mode, using running statistics.
pub fn batch_norm_eval(
    x: &GridTensor,
    gamma: &GridTensor,
    beta: &GridTensor,
    running_mean: &GridTensor,
    running_var: &GridTensor,
) -> Result<GridTensor> {
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return Err(shape_err("batch_norm", format!("{:?}", shape)));
    }
    let c = shape[1];
    let mean = running_mean
        .reshape(vec![1, c, 1, 1])?
        .broadcast_to(shape.clone())?;
    let inv_std = running_var.add_scalar(NORM_EPS).powf(-0.5);
    let inv_std = inv_std
        .reshape(vec![1, c, 1, 1])?
        .broadcast_to(shape.clone())?;
    let xhat = x.sub(&mean)?.mul(&inv_std)?;
    affine_channels(&xhat, gamma, beta)
}

fn normalize_over(
    x: &GridTensor,
    axes: &[usize],
    gamma: &GridTensor,
    beta: &GridTensor,
) -> Result<GridTensor> {
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return Err(shape_err("instance_norm", format!("{:?}", shape)));
    }
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    let mean = x.sum_axes(axes)?.scale(1.0 / count as f32);
    let centered = x.sub(&mean.broadcast_to(shape.clone())?)?;
    let var = centered
        .mul(&centered)?
        .sum_axes(axes)?
        .scale(1.0 / count as f32);
    let inv_std = var.add_scalar(NORM_EPS).powf(-0.5);
    let xhat = centered.mul(&inv_std.broadcast_to(shape.clone())?)?;
    affine_channels(&xhat, gamma, beta)
}

/// Per-channel affine: x * gamma[C] + beta[C] on an [N,C,H,W] tensor.
pub fn affine_channels(
    x: &GridTensor,
    gamma: &GridTensor,
    beta: &GridTensor,
) -> Result<GridTensor> {
    let shape = x.shape().to_vec();
    let c = shape[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            "affine_channels",
            format!(
                "gamma {:?} beta {:?} for C={}",
                gamma.shape(),
                beta.shape(),
                c
            ),
        ));
    }
    let g = gamma
        .reshape(vec![1, c, 1, 1])?
        .broadcast_to(shape.clone())?;
    let b = beta.reshape(vec![1, c, 1, 1])?.broadcast_to(shape)?;
    x.mul(&g)?.add(&b)
}

/// Dropout with inverted scaling: at train time each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate), so eval is a
/// no-op.
pub fn dropout<R: Rng>(x: &GridTensor, rate: f32, train: bool, rng: &mut R) -> Result<GridTensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(crate::error::TensorError::InvalidArg(format!(
            "dropout rate {rate}"
        )));
    }
    if !train || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f32> = (0..x.numel())
        .map(|_| {
            if rng.gen::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask_t = GridTensor::from_vec(x.shape().to_vec(), mask);
    let mask_t = match x.tape() {
        Some(t) => t.constant(&mask_t),
        None => mask_t,
    };
    x.mul(&mask_t)
}

/// Mean over the spatial dims of [N,C,H,W] -> [N,C,1,1].
pub fn global_avg_pool_spatial(x: &GridTensor) -> Result<GridTensor> {
    if x.shape().len() != 4 {
        return Err(shape_err(
            "global_avg_pool_spatial",
            format!("{:?}", x.shape()),
        ));
    }
    mean_axes(x, &[2, 3])
}

/// Mean over the channel dim of [N,C,H,W] -> [N,1,H,W].
pub fn global_avg_pool_channel(x: &GridTensor) -> Result<GridTensor> {
    if x.shape().len() != 4 {
        return Err(shape_err(
            "global_avg_pool_channel",
            format!("{:?}", x.shape()),
        ));
    }
    mean_axes(x, &[1])
}

/// Euclidean norm of the whole tensor, guarded by a tiny eps inside the root
/// so the gradient stays finite at zero.
pub fn l2_norm(x: &GridTensor) -> GridTensor {
    x.mul(x)
        .expect("same shape")
        .sum_all()
        .add_scalar(1e-12)
        .powf(0.5)
}

/// Zero-pad an [N,C,H,W] tensor to `target_h` x `target_w`, centered
/// (extra row/col goes to the bottom/right).
pub fn zero_pad_center(x: &GridTensor, target_h: usize, target_w: usize) -> Result<GridTensor> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if target_h < h || target_w < w {
        return Err(shape_err(
            "zero_pad_center",
            format!("{h}x{w} -> {target_h}x{target_w}"),
        ));
    }
    let (t, l) = ((target_h - h) / 2, (target_w - w) / 2);
    x.pad2d([t, target_h - h - t, l, target_w - w - l])
}

/// Center-crop an [N,C,H,W] tensor to `target_h` x `target_w`; exact inverse
/// of `zero_pad_center`.
pub fn center_crop(x: &GridTensor, target_h: usize, target_w: usize) -> Result<GridTensor> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if target_h > h || target_w > w {
        return Err(shape_err(
            "center_crop",
            format!("{h}x{w} -> {target_h}x{target_w}"),
        ));
    }
    let (t, l) = ((h - target_h) / 2, (w - target_w) / 2);
    x.crop2d([t, h - target_h - t, l, w - target_w - l])
}
