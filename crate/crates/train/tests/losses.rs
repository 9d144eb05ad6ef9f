//! Loss oracles: closed-form gradient penalties for linear critics, the
//! double-backward finite-difference check, and the analytic-W1 toy fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swigan_model::{ConvSpec, CriticConfig, CriticParams, ParamSet};
use swigan_tensor::gradcheck::{lcg_uniform, GradCheck};
use swigan_tensor::{GridTensor, Tape};
use swigan_train::{critic_loss, generator_loss, gradient_penalty, AugmentDraw, TrainConfig};

fn plain_layer(kernel: usize, filters: usize) -> ConvSpec {
    ConvSpec {
        kernel,
        filters,
        stride: 1,
        padding: 0,
        instance_norm: false,
        activation: false,
        spectral_norm: false,
    }
}

/// A critic whose score is exactly `scale * mean(map)` twice (frame + patch),
/// ignoring the context. With scale = H*W/2 the input gradient is all-ones.
fn linear_critic(_h: usize, _w: usize, ctx_channels: usize, scale: f32) -> CriticParams {
    let cfg = CriticConfig {
        base: vec![plain_layer(1, 1)],
        frame: vec![plain_layer(1, 1)],
        patch: vec![plain_layer(1, 1)],
        leaky_slope: 0.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = CriticParams::init(&cfg, 1 + ctx_channels, &mut rng).unwrap();
    // base: pick out the map channel with weight `scale`, zero the context
    let mut base_w = vec![0.0f32; 1 + ctx_channels];
    base_w[0] = scale;
    p.base[0].w = GridTensor::from_vec(vec![1, 1 + ctx_channels, 1, 1], base_w);
    p.base[0].b = GridTensor::zeros(vec![1]);
    p.frame[0].w = GridTensor::from_vec(vec![1, 1, 1, 1], vec![1.0]);
    p.frame[0].b = GridTensor::zeros(vec![1]);
    p.patch[0].w = GridTensor::from_vec(vec![1, 1, 1, 1], vec![1.0]);
    p.patch[0].b = GridTensor::zeros(vec![1]);
    p
}

/// D(x) = sum(x): the gradient is all-ones, the norm is sqrt(H W), and the
/// penalty equals (sqrt(H W) - 1)^2 for every interpolate.
#[test]
fn gradient_penalty_of_sum_critic_matches_closed_form() {
    let (h, w) = (37, 44);
    let hw = (h * w) as f64;
    let critic = linear_critic(h, w, 2, hw as f32 / 2.0);

    let n = 3;
    let real = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(1, n * h * w));
    let fake = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(2, n * h * w));
    let ctx = GridTensor::from_vec(vec![n, 2, h, w], lcg_uniform(3, n * 2 * h * w));

    let tape = Tape::new();
    let watched = critic.watched(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (gp, norms) = gradient_penalty(&real, &fake, &ctx, &watched, &tape, &mut rng).unwrap();

    let expected = (hw.sqrt() - 1.0).powi(2);
    let got = gp.item() as f64;
    assert!(
        (got - expected).abs() / expected < 1e-3,
        "penalty {got:.4}, closed form {expected:.4}"
    );
    for &n in &norms {
        assert!(
            (n as f64 - hw.sqrt()).abs() < 0.05,
            "norm {n} should be ~sqrt({hw})"
        );
    }
}

/// A detached critic is a contract violation: the penalty must stay
/// differentiable with respect to the critic parameters.
#[test]
fn gradient_penalty_rejects_detached_critic() {
    let critic = linear_critic(4, 4, 1, 1.0);
    let real = GridTensor::zeros(vec![2, 1, 4, 4]);
    let fake = GridTensor::full(vec![2, 1, 4, 4], 0.5);
    let ctx = GridTensor::zeros(vec![2, 1, 4, 4]);
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = gradient_penalty(&real, &fake, &ctx, &critic, &tape, &mut rng).unwrap_err();
    assert!(err.to_string().contains("tape"), "unexpected error: {err}");
}

/// A critic with unit input-gradient norm has zero penalty.
#[test]
fn gradient_penalty_zero_for_unit_gradient_critic() {
    let (h, w) = (8, 8);
    let hw = (h * w) as f32;
    // gradient per pixel is 2 scale / HW; norm = 2 scale / sqrt(HW)
    let critic = linear_critic(h, w, 1, hw.sqrt() / 2.0);

    let n = 4;
    let real = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(5, n * h * w));
    let fake = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(6, n * h * w));
    let ctx = GridTensor::zeros(vec![n, 1, h, w]);

    let tape = Tape::new();
    let watched = critic.watched(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (gp, _) = gradient_penalty(&real, &fake, &ctx, &watched, &tape, &mut rng).unwrap();
    assert!(
        gp.item().abs() < 1e-4,
        "unit-gradient critic should have ~0 penalty, got {}",
        gp.item()
    );
}

/// d(penalty)/d(theta) on a small critic matches finite differences of the
/// penalty: the double-backward contract.
#[test]
fn gradient_penalty_double_backward_matches_fd() {
    let (h, w) = (5, 5);
    let base = linear_critic(h, w, 1, 2.0);
    let real = GridTensor::from_vec(vec![2, 1, h, w], lcg_uniform(8, 2 * h * w));
    let fake = GridTensor::from_vec(vec![2, 1, h, w], lcg_uniform(9, 2 * h * w));
    let ctx = GridTensor::from_vec(vec![2, 1, h, w], lcg_uniform(10, 2 * h * w));

    let leaves = vec![base.base[0].w.clone(), base.frame[0].w.clone()];
    GradCheck::with_tol(1e-3, 1e-4)
        .check(&leaves, |tape, l| -> swigan_train::Result<GridTensor> {
            let mut p = base.clone();
            p.base[0].w = l[0].clone();
            p.frame[0].w = l[1].clone();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let (gp, _) = gradient_penalty(&real, &fake, &ctx, &p, tape, &mut rng)?;
            Ok(gp)
        })
        .unwrap();
}

/// A constant critic has zero Wasserstein term and GP = (0 - 1)^2 = 1.
#[test]
fn critic_loss_constant_critic() {
    let (h, w) = (8, 8);
    let cfg = CriticConfig {
        base: vec![plain_layer(1, 4)],
        frame: vec![plain_layer(1, 1)],
        patch: vec![plain_layer(1, 1)],
        leaky_slope: 0.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut p = CriticParams::init(&cfg, 2, &mut rng).unwrap();
    p.visit_mut(&mut |name, t, _| {
        if !name.contains("sn_") {
            *t = GridTensor::zeros(t.shape().to_vec());
        }
    });
    p.frame[0].b = GridTensor::full(vec![1], 3.25);

    let tcfg = TrainConfig::desk();
    let n = 4;
    let real = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(13, n * h * w));
    let fake = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(14, n * h * w));
    let ctx = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(15, n * h * w));

    let tape = Tape::new();
    let watched = p.watched(&tape);
    let mut aug = ChaCha8Rng::seed_from_u64(16);
    let mut gp_rng = ChaCha8Rng::seed_from_u64(17);
    let parts = critic_loss(
        &real,
        &fake,
        &ctx,
        &watched,
        &tcfg,
        &tape,
        &mut aug,
        &mut gp_rng,
    )
    .unwrap();
    assert!(
        parts.wasserstein.abs() < 1e-5,
        "constant critic wasserstein {}",
        parts.wasserstein
    );
    assert!(
        (parts.gp - 1.0).abs() < 1e-4,
        "constant critic GP {}",
        parts.gp
    );
    assert!(
        (parts.total.item() - tcfg.lambda_pen).abs() < 1e-3,
        "loss should be lambda_pen, got {}",
        parts.total.item()
    );
}

/// With real == fake, a linear critic's Wasserstein term vanishes exactly
/// (the shared augmentation draw keeps both sides identical).
#[test]
fn critic_loss_zero_wasserstein_for_identical_batches() {
    let (h, w) = (8, 8);
    let critic = linear_critic(h, w, 1, 1.0);
    let tcfg = TrainConfig::desk();
    let n = 3;
    let maps = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(18, n * h * w));
    let ctx = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(19, n * h * w));

    let tape = Tape::new();
    let watched = critic.watched(&tape);
    let mut aug = ChaCha8Rng::seed_from_u64(20);
    let mut gp_rng = ChaCha8Rng::seed_from_u64(21);
    let parts = critic_loss(
        &maps,
        &maps,
        &ctx,
        &watched,
        &tcfg,
        &tape,
        &mut aug,
        &mut gp_rng,
    )
    .unwrap();
    assert_eq!(parts.wasserstein, 0.0);
}

#[test]
fn generator_loss_perfect_fake_has_zero_rec_and_feat() {
    let (h, w) = (8, 8);
    let critic = linear_critic(h, w, 1, 1.0);
    let tcfg = TrainConfig::desk();
    let n = 3;
    let maps = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(22, n * h * w));
    let ctx = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(23, n * h * w));
    let mut aug = ChaCha8Rng::seed_from_u64(24);
    let parts = generator_loss(&maps, &maps, &ctx, &critic, &tcfg, &mut aug).unwrap();
    assert_eq!(parts.reconstruction, 0.0);
    assert_eq!(parts.feature_matching, 0.0);
}

#[test]
fn generator_loss_reduces_to_adversarial_when_weights_zero() {
    let (h, w) = (8, 8);
    let critic = linear_critic(h, w, 1, 1.0);
    let mut tcfg = TrainConfig::desk();
    tcfg.lambda_rec = 0.0;
    tcfg.lambda_feat = 0.0;
    let n = 2;
    let fake = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(25, n * h * w));
    let real = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(26, n * h * w));
    let ctx = GridTensor::from_vec(vec![n, 1, h, w], lcg_uniform(27, n * h * w));
    let mut aug = ChaCha8Rng::seed_from_u64(28);
    let parts = generator_loss(&fake, &real, &ctx, &critic, &tcfg, &mut aug).unwrap();
    assert!((parts.total.item() - parts.adversarial).abs() < 1e-6);
}

// ── diff_augment ────────────────────────────────────────────────────────

#[test]
fn identity_draw_is_identity() {
    let x = GridTensor::from_vec(vec![2, 3, 8, 8], lcg_uniform(29, 2 * 3 * 64));
    let draw = AugmentDraw::identity(2, 8, 8);
    let y = swigan_train::diff_augment(&x, &draw).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn augment_is_deterministic_under_fixed_rng() {
    let x = GridTensor::from_vec(vec![2, 1, 8, 8], lcg_uniform(30, 2 * 64));
    let mk = || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let draw = AugmentDraw::sample(2, 8, 8, &mut rng);
        swigan_train::diff_augment(&x, &draw).unwrap().to_vec()
    };
    assert_eq!(mk(), mk());
}

/// The gradient of sum(diff_augment(x)) is exactly the 0/1 visibility mask.
#[test]
fn augment_gradient_equals_visibility_mask() {
    let (n, c, h, w) = (2, 2, 9, 9);
    let x = GridTensor::from_vec(vec![n, c, h, w], lcg_uniform(32, n * c * h * w));
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let draw = AugmentDraw::sample(n, h, w, &mut rng);

    let tape = Tape::new();
    let xt = tape.watch(&x);
    let y = swigan_train::diff_augment(&xt, &draw).unwrap();
    let g = swigan_tensor::grad(&y.sum_all(), &[&xt], false)
        .unwrap()
        .remove(0);

    let mask = draw.visibility_mask(); // [n, h, w]
    for s in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                let got = g.data()[((s * c) + ch) * h * w + p];
                let want = mask[s * h * w + p];
                assert_eq!(got, want, "sample {s} channel {ch} pixel {p}");
            }
        }
    }
}

/// On a two-point toy distribution the trained critic's Wasserstein estimate
/// approaches the analytic W1 distance ||a - b||_2 between the point masses.
#[test]
fn trained_critic_estimates_w1_between_point_masses() {
    let (h, w) = (4, 4);
    let hw = (h * w) as f64;
    let (a, b) = (0.0f32, 0.5f32);
    let analytic_w1 = ((a - b) as f64).abs() * hw.sqrt(); // 2.0

    let cfg = CriticConfig {
        base: vec![ConvSpec {
            kernel: 3,
            filters: 8,
            stride: 1,
            padding: 1,
            instance_norm: false,
            activation: true,
            spectral_norm: false,
        }],
        frame: vec![plain_layer(1, 1)],
        patch: vec![plain_layer(1, 1)],
        leaky_slope: 0.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut critic = CriticParams::init(&cfg, 2, &mut rng).unwrap();

    let n = 8;
    let real = GridTensor::full(vec![n, 1, h, w], a);
    let fake = GridTensor::full(vec![n, 1, h, w], b);
    let ctx = GridTensor::zeros(vec![n, 1, h, w]);

    let mut opt = swigan_train::AdamW::new(5e-3, 0.0, 0.5, 0.9, 400);
    let mut gp_rng = ChaCha8Rng::seed_from_u64(41);
    let lambda_pen = 10.0;
    for _ in 0..400 {
        critic.power_iterate_all();
        let tape = Tape::new();
        let watched = critic.watched(&tape);
        let d_real = swigan_model::critic_forward(&watched, &real, &ctx, Some(&tape))
            .unwrap()
            .score
            .mean_all();
        let d_fake = swigan_model::critic_forward(&watched, &fake, &ctx, Some(&tape))
            .unwrap()
            .score
            .mean_all();
        let (gp, _) = gradient_penalty(&real, &fake, &ctx, &watched, &tape, &mut gp_rng).unwrap();
        let loss = d_fake
            .sub(&d_real)
            .unwrap()
            .add(&gp.scale(lambda_pen))
            .unwrap();
        let flat = watched.flatten();
        let trainable: Vec<(String, GridTensor)> = flat
            .into_iter()
            .filter(|(_, _, k)| *k == swigan_model::ParamKind::Trainable)
            .map(|(n, t, _)| (n, t))
            .collect();
        let refs: Vec<&GridTensor> = trainable.iter().map(|(_, t)| t).collect();
        let grads = swigan_tensor::grad(&loss, &refs, false).unwrap();
        let map: std::collections::HashMap<String, GridTensor> =
            trainable.into_iter().map(|(n, _)| n).zip(grads).collect();
        opt.step(&mut critic, &map);
    }

    // final Wasserstein estimate
    let est = {
        let d_real = swigan_model::critic_forward(&critic, &real, &ctx, None)
            .unwrap()
            .score;
        let d_fake = swigan_model::critic_forward(&critic, &fake, &ctx, None)
            .unwrap()
            .score;
        (d_real.mean_all().item() - d_fake.mean_all().item()) as f64
    };
    assert!(
        (est - analytic_w1).abs() / analytic_w1 < 0.2,
        "W1 estimate {est:.3} vs analytic {analytic_w1:.3}"
    );
}
