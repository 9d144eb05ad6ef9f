//! End-to-end gradient check through the whole generator on a tiny
//! configuration (4x4 grid, 2 stages).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swigan_data::{synthesize_dataset, MonthStamp, SynthSpec};
use swigan_model::*;
use swigan_tensor::gradcheck::{lcg_uniform, GradCheck};
use swigan_tensor::GridTensor;

#[test]
fn generator_end_to_end_gradcheck() {
    let cfg = GeneratorConfig {
        grid_h: 4,
        grid_w: 4,
        padded: 4,
        stage_channels: vec![2, 2],
        lag_u: 1,
        noise_dim: 2,
        embed_dim: 2,
        n_covariates: 1,
        dropout_rate: 0.2,
        leaky_slope: 0.2,
    };
    let spec = SynthSpec {
        grid_h: 4,
        grid_w: 4,
        n_months: 8,
        start: MonthStamp::new(2001, 1),
        n_covariates: 1,
        train_months: 6,
        val_months: 1,
        ..SynthSpec::desk()
    };
    let ds = synthesize_dataset(&spec, 1).unwrap().normalize().unwrap();
    let targets = [2usize, 3];
    let base_ctx = ContextBatch::from_dataset(&ds, &targets, cfg.lag_u).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = GeneratorParams::init(&cfg, &mut rng).unwrap();

    let leaves = vec![
        base_ctx.channels.clone(),
        params.encoder[0].conv1.w.clone(),
        params.decoder[1].conv2.b.clone(),
        params.embed.clone(),
        params.head_w.clone(),
        params.encoder[1].conv2.noise_scale.clone().unwrap(),
        params.decoder[0].scse.fc2_w.clone(),
    ];
    let months = base_ctx.months.clone();
    let noise = GridTensor::from_vec(vec![2, cfg.noise_dim], lcg_uniform(5, 2 * cfg.noise_dim));

    GradCheck {
        h: 1e-5,
        rel_tol: 2e-3,
        abs_tol: 2e-4,
    }
    .check(&leaves, |tape, l| -> swigan_model::Result<GridTensor> {
        let mut p = params.clone();
        p.encoder[0].conv1.w = l[1].clone();
        p.decoder[1].conv2.b = l[2].clone();
        p.embed = l[3].clone();
        p.head_w = l[4].clone();
        p.encoder[1].conv2.noise_scale = Some(l[5].clone());
        p.decoder[0].scse.fc2_w = l[6].clone();
        let ctx = ContextBatch::from_raw(l[0].clone(), months.clone())?;
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut fwd = Forward {
            mode: Mode::Eval,
            tape: Some(tape),
            rng: &mut r,
            bn_updates: None,
        };
        let y = generator_forward_with_noise(&p, &ctx, &noise, &mut fwd)?;
        let w = GridTensor::from_vec(y.shape().to_vec(), lcg_uniform(9, y.numel()));
        Ok(y.mul(&w)?.sum_all())
    })
    .unwrap();
}
