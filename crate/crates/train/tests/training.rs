//! Training-loop contracts: determinism, update cadence, checkpoint/resume
//! bit-exactness, NaN aborts, and gradient flow through the augmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swigan_data::{synthesize_dataset, ClimateDataset, MonthStamp, SynthSpec};
use swigan_model::{
    generator_forward, ContextBatch, CriticConfig, Forward, GeneratorConfig, ParamKind, ParamSet,
};
use swigan_tensor::{GridTensor, Tape};
use swigan_train::{generator_loss, train, TrainConfig, Trainer};

fn tiny_gen_cfg() -> GeneratorConfig {
    GeneratorConfig {
        grid_h: 8,
        grid_w: 8,
        padded: 8,
        stage_channels: vec![4, 4],
        lag_u: 1,
        noise_dim: 4,
        embed_dim: 3,
        n_covariates: 2,
        dropout_rate: 0.2,
        leaky_slope: 0.2,
    }
}

fn tiny_critic_cfg() -> CriticConfig {
    let mut cfg = CriticConfig::desk();
    // one base downsample keeps 4x4 features from the 8x8 grid
    cfg.base = cfg.base[..1].to_vec();
    cfg
}

fn tiny_dataset(seed: u64) -> ClimateDataset {
    let spec = SynthSpec {
        grid_h: 8,
        grid_w: 8,
        n_months: 30,
        start: MonthStamp::new(2005, 1),
        n_covariates: 2,
        train_months: 26,
        val_months: 2,
        ..SynthSpec::desk()
    };
    synthesize_dataset(&spec, seed)
        .unwrap()
        .normalize()
        .unwrap()
}

fn tiny_train_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 5,
        epochs: 2,
        lr: 1e-3,
        seed: 9,
        ..TrainConfig::desk()
    }
}

#[test]
fn zero_epoch_run_returns_initialized_params_and_empty_history() {
    let ds = tiny_dataset(1);
    let mut cfg = tiny_train_cfg();
    cfg.epochs = 0;
    let out = train(&ds, &tiny_gen_cfg(), &tiny_critic_cfg(), &cfg, None).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.critic_updates, 0);
    assert_eq!(out.gen_updates, 0);
}

#[test]
fn same_seed_same_final_parameters_bitwise() {
    let ds = tiny_dataset(2);
    let run = || {
        let out = train(
            &ds,
            &tiny_gen_cfg(),
            &tiny_critic_cfg(),
            &tiny_train_cfg(),
            None,
        )
        .unwrap();
        let mut bits = Vec::new();
        for (_, t, _) in out.gen.flatten() {
            bits.extend(t.data().iter().map(|v| v.to_bits()));
        }
        for (_, t, _) in out.critic.flatten() {
            bits.extend(t.data().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn critic_updates_are_exactly_critic_steps_per_generator_update() {
    let ds = tiny_dataset(3);
    let cfg = tiny_train_cfg();
    let out = train(&ds, &tiny_gen_cfg(), &tiny_critic_cfg(), &cfg, None).unwrap();
    // 25 usable targets -> 5 batches of 5 per epoch, 2 epochs = 10 critic steps
    assert_eq!(out.critic_updates, 10);
    assert_eq!(out.gen_updates, out.critic_updates / cfg.critic_steps);
    assert!(out.gen_updates > 0);
}

#[test]
fn checkpoint_resume_reproduces_uninterrupted_run_bitwise() {
    let ds = tiny_dataset(4);
    let gen_cfg = tiny_gen_cfg();
    let critic_cfg = tiny_critic_cfg();
    let mut cfg = tiny_train_cfg();
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;

    // uninterrupted, leaving a checkpoint at epoch 2
    let dir = tempfile::tempdir().unwrap();
    let full = train(&ds, &gen_cfg, &critic_cfg, &cfg, Some(dir.path())).unwrap();
    let ckpt = dir.path().join("epoch_00002");
    assert!(ckpt.exists(), "intermediate checkpoint missing");

    // fresh trainer under the same config, resumed from the checkpoint
    let mut resumed = Trainer::new(&ds, &gen_cfg, &critic_cfg, &cfg).unwrap();
    resumed.load_checkpoint(&ckpt).unwrap();
    let rest = resumed.run(&ds, None).unwrap();

    for ((na, ta, _), (nb, tb, _)) in full.gen.flatten().iter().zip(rest.gen.flatten().iter()) {
        assert_eq!(na, nb);
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "generator diverged at {na}");
        }
    }
    for ((na, ta, _), (nb, tb, _)) in full
        .critic
        .flatten()
        .iter()
        .zip(rest.critic.flatten().iter())
    {
        assert_eq!(na, nb);
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "critic diverged at {na}");
        }
    }
}

#[test]
fn nan_loss_aborts_with_diagnostic() {
    let ds = tiny_dataset(5);
    let mut trainer =
        Trainer::new(&ds, &tiny_gen_cfg(), &tiny_critic_cfg(), &tiny_train_cfg()).unwrap();
    // poison one generator weight
    trainer.gen.head_w = GridTensor::full(trainer.gen.head_w.shape().to_vec(), f32::NAN);
    let err = trainer.run(&ds, None).unwrap_err();
    match err {
        swigan_train::TrainError::NanLoss { epoch, batch, .. } => {
            assert_eq!(epoch, 0);
            assert!(!batch.is_empty());
        }
        other => panic!("expected NanLoss, got {other}"),
    }
}

/// Generator gradients flow through the differentiable augmentation: with
/// reconstruction and feature weights zeroed, the only path from the loss to
/// the generator runs through diff_augment and the critic.
#[test]
fn generator_gradient_flows_through_augmentation() {
    let ds = tiny_dataset(6);
    let gen_cfg = tiny_gen_cfg();
    let trainer = Trainer::new(&ds, &gen_cfg, &tiny_critic_cfg(), &tiny_train_cfg()).unwrap();

    let targets = [2usize, 3, 4];
    let ctx = ContextBatch::from_dataset(&ds, &targets, gen_cfg.lag_u).unwrap();
    let real = ContextBatch::targets_tensor(&ds, &targets);

    let tape = Tape::new();
    let watched = trainer.gen.watched(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bn = Vec::new();
    let mut fwd = Forward::train(&tape, &mut rng, &mut bn);
    let fake = generator_forward(&watched, &ctx, &mut fwd).unwrap();

    let mut cfg = tiny_train_cfg();
    cfg.lambda_rec = 0.0;
    cfg.lambda_feat = 0.0;
    let mut aug = ChaCha8Rng::seed_from_u64(8);
    let parts =
        generator_loss(&fake, &real, &ctx.channels, &trainer.critic, &cfg, &mut aug).unwrap();

    let flat = watched.flatten();
    let head = flat
        .iter()
        .find(|(n, _, k)| n == "head.w" && *k == ParamKind::Trainable)
        .unwrap();
    let g = swigan_tensor::grad(&parts.total, &[&head.1], false).unwrap();
    let norm: f32 = g[0].data().iter().map(|v| v.abs()).sum();
    assert!(
        norm > 0.0,
        "no gradient reached the generator through the augmentation"
    );
}

#[test]
fn unnormalized_dataset_is_rejected() {
    let spec = SynthSpec {
        grid_h: 8,
        grid_w: 8,
        n_months: 30,
        start: MonthStamp::new(2005, 1),
        n_covariates: 2,
        train_months: 26,
        val_months: 2,
        ..SynthSpec::desk()
    };
    let raw = synthesize_dataset(&spec, 7).unwrap();
    assert!(Trainer::new(&raw, &tiny_gen_cfg(), &tiny_critic_cfg(), &tiny_train_cfg()).is_err());
}
