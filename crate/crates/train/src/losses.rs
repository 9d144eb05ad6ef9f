//! WGAN-GP losses: gradient penalty (double backward through the critic),
//! critic loss, and the generator loss with reconstruction and
//! feature-matching terms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swigan_model::{critic_forward, CriticParams, ParamSet};
use swigan_tensor::{grad, GridTensor, Tape, TensorError};

use crate::augment::{diff_augment, AugmentDraw};
use crate::config::{Result, TrainConfig, TrainError};

/// Mean over the batch of (||grad_x D(x_hat | c)||_2 - 1)^2, where x_hat
/// interpolates real and fake maps with a per-sample uniform epsilon.
///
/// The returned scalar stays differentiable with respect to the critic
/// parameters (the inner backward is recorded on the tape), which is the one
/// place double backward is required. Also returns the per-sample gradient
/// norms for diagnostics.
pub fn gradient_penalty(
    real: &GridTensor,
    fake: &GridTensor,
    context: &GridTensor,
    critic: &CriticParams,
    tape: &Tape,
    rng: &mut ChaCha8Rng,
) -> Result<(GridTensor, Vec<f32>)> {
    let shape = real.shape().to_vec();
    if fake.shape() != shape {
        return Err(TrainError::Config(format!(
            "gradient_penalty batch shapes differ: {:?} vs {:?}",
            shape,
            fake.shape()
        )));
    }
    let n = shape[0];

    // x_hat = eps * real + (1 - eps) * fake, eps ~ U(0,1) per sample
    let eps: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
    let eps_t = GridTensor::from_vec(vec![n, 1, 1, 1], eps);
    let one_minus = eps_t.neg().add_scalar(1.0);
    let interp = real
        .detach()
        .mul(&eps_t.broadcast_to(shape.clone())?)?
        .add(&fake.detach().mul(&one_minus.broadcast_to(shape.clone())?)?)?;

    // the penalty must be differentiable w.r.t. the critic parameters, so a
    // detached critic is a contract violation (the interpolate alone would
    // still put the score on the tape)
    let critic_tracked = critic
        .flatten()
        .iter()
        .any(|(_, t, k)| *k == swigan_model::ParamKind::Trainable && t.is_tracked());
    if !critic_tracked {
        return Err(TrainError::Tensor(TensorError::NotOnTape(
            "gradient penalty requires a critic watched on the tape",
        )));
    }
    let x_hat = tape.watch(&interp);
    let out = critic_forward(critic, &x_hat, context, Some(tape))?;
    // Per-sample scores are independent, so one backward of the batch sum
    // yields every sample's input gradient.
    let score_sum = out.score.sum_all();
    let g = grad(&score_sum, &[&x_hat], true)?.remove(0);

    let sq_norm = g.mul(&g)?.sum_axes(&[1, 2, 3])?;
    let norm = sq_norm.add_scalar(1e-12).powf(0.5).reshape(vec![n])?;
    let excess = norm.add_scalar(-1.0);
    let penalty = excess.mul(&excess)?.sum_all().scale(1.0 / n as f32);
    Ok((penalty, norm.detach().to_vec()))
}

pub struct CriticLossParts {
    pub total: GridTensor,
    pub wasserstein: f32,
    pub gp: f32,
    pub grad_norms: Vec<f32>,
}

/// Critic objective, minimized: E[D(fake)] - E[D(real)] + lambda_pen * GP.
/// One augmentation draw per batch applies identically to the real map, the
/// fake map and the context so interpolates stay conditioned consistently.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    real: &GridTensor,
    fake: &GridTensor,
    context: &GridTensor,
    critic: &CriticParams,
    cfg: &TrainConfig,
    tape: &Tape,
    aug_rng: &mut ChaCha8Rng,
    gp_rng: &mut ChaCha8Rng,
) -> Result<CriticLossParts> {
    let n = real.shape()[0];
    let draw = AugmentDraw::sample(n, real.shape()[2], real.shape()[3], aug_rng);
    let real_a = diff_augment(&real.detach(), &draw)?;
    let fake_a = diff_augment(&fake.detach(), &draw)?;
    let ctx_a = diff_augment(context, &draw)?;

    let d_real = critic_forward(critic, &real_a, &ctx_a, Some(tape))?
        .score
        .mean_all();
    let d_fake = critic_forward(critic, &fake_a, &ctx_a, Some(tape))?
        .score
        .mean_all();
    let (gp, grad_norms) = gradient_penalty(&real_a, &fake_a, &ctx_a, critic, tape, gp_rng)?;

    let wasserstein = d_fake.item() - d_real.item();
    let gp_value = gp.item();
    let total = d_fake.sub(&d_real)?.add(&gp.scale(cfg.lambda_pen))?;
    Ok(CriticLossParts {
        total,
        wasserstein,
        gp: gp_value,
        grad_norms,
    })
}

pub struct GenLossParts {
    pub total: GridTensor,
    pub adversarial: f32,
    pub reconstruction: f32,
    pub feature_matching: f32,
}

/// Generator objective:
/// -E[D(fake | c)] + lambda_rec * MAE(fake, real) + lambda_feat * feat,
/// with feat = || E v(real) - E v(fake) ||^2 over the critic's base
/// features. The reconstruction term compares unaugmented maps.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    fake: &GridTensor,
    real: &GridTensor,
    context: &GridTensor,
    critic: &CriticParams,
    cfg: &TrainConfig,
    aug_rng: &mut ChaCha8Rng,
) -> Result<GenLossParts> {
    let n = fake.shape()[0];
    let draw = AugmentDraw::sample(n, fake.shape()[2], fake.shape()[3], aug_rng);
    let fake_a = diff_augment(fake, &draw)?;
    let real_a = diff_augment(&real.detach(), &draw)?;
    let ctx_a = diff_augment(context, &draw)?;

    // The critic is a constant from the generator's perspective: its
    // spectral-norm weights stay detached and the graph grows only from the
    // tracked fake maps.
    let out_fake = critic_forward(critic, &fake_a, &ctx_a, None)?;
    let out_real = critic_forward(critic, &real_a, &ctx_a, None)?;

    let adv = out_fake.score.mean_all().neg();

    let rec = fake.sub(&real.detach())?.abs().mean_all();

    let feat_dim: usize = out_fake.features.shape()[1..].iter().product();
    let mean_feat = |f: &GridTensor| -> swigan_tensor::Result<GridTensor> {
        f.sum_axes(&[0])?
            .scale(1.0 / n as f32)
            .reshape(vec![feat_dim])
    };
    let diff = mean_feat(&out_real.features)?.sub(&mean_feat(&out_fake.features)?)?;
    let feat = diff.mul(&diff)?.sum_all();

    let total = adv
        .add(&rec.scale(cfg.lambda_rec))?
        .add(&feat.scale(cfg.lambda_feat))?;
    Ok(GenLossParts {
        adversarial: adv.item(),
        reconstruction: rec.item(),
        feature_matching: feat.item(),
        total,
    })
}
