//! The adversarial training loop: alternating critic and generator updates,
//! per-epoch history, NaN aborts, and bit-exact checkpoint/resume.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swigan_data::{ClimateDataset, Split};
use swigan_model::{
    generator_forward, BnUpdate, ContextBatch, CriticConfig, CriticParams, Forward,
    GeneratorConfig, GeneratorParams, Mode, ParamKind, ParamSet,
};
use swigan_tensor::{grad_quiet, GridTensor, Tape};

use crate::config::{Result, TrainConfig, TrainError};
use crate::losses::{critic_loss, generator_loss};
use crate::optim::AdamW;

const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub critic_loss: f32,
    pub gen_loss: f32,
    pub gp: f32,
    pub rec: f32,
    pub feat: f32,
    pub lr: f32,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub gen: GeneratorParams,
    pub critic: CriticParams,
    pub history: Vec<EpochStats>,
    /// Per-sample interpolate gradient norms observed during the final epoch.
    pub final_grad_norms: Vec<f32>,
    /// Running mean of the gradient penalty over the final epoch.
    pub final_gp_mean: f32,
    pub critic_updates: usize,
    pub gen_updates: usize,
}

struct TrainRngs {
    shuffle: ChaCha8Rng,
    forward: ChaCha8Rng,
    augment: ChaCha8Rng,
    gp: ChaCha8Rng,
}

impl TrainRngs {
    fn new(seed: u64) -> Self {
        let mk = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        Self {
            shuffle: mk(2),
            forward: mk(3),
            augment: mk(4),
            gp: mk(5),
        }
    }
}

pub struct Trainer {
    pub gen: GeneratorParams,
    pub critic: CriticParams,
    opt_g: AdamW,
    opt_c: AdamW,
    rngs: TrainRngs,
    cfg: TrainConfig,
    /// Next epoch to run.
    epoch: usize,
    /// Global critic-batch counter; a generator step follows every
    /// `critic_steps`-th critic step.
    batch_counter: u64,
}

impl Trainer {
    pub fn new(
        ds: &ClimateDataset,
        gen_cfg: &GeneratorConfig,
        critic_cfg: &CriticConfig,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        validate_dataset(ds, gen_cfg)?;
        let (critic_total, gen_total) = step_budget(ds, gen_cfg, cfg);

        let mut init_g = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_g.set_stream(0);
        let mut init_c = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_c.set_stream(1);

        let gen = GeneratorParams::init(gen_cfg, &mut init_g)?;
        let ctx_channels = (gen_cfg.lag_u + 1) * gen_cfg.n_covariates + gen_cfg.lag_u;
        let critic = CriticParams::init(critic_cfg, 1 + ctx_channels, &mut init_c)?;
        // fail fast when the critic geometry cannot digest the grid
        critic_cfg
            .realized_extents(gen_cfg.grid_h, gen_cfg.grid_w)
            .map_err(swigan_model::ModelError::from)?;

        Ok(Self {
            gen,
            critic,
            opt_g: AdamW::new(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, gen_total),
            opt_c: AdamW::new(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, critic_total),
            rngs: TrainRngs::new(cfg.seed),
            cfg: cfg.clone(),
            epoch: 0,
            batch_counter: 0,
        })
    }

    /// Run the remaining epochs. Writes a checkpoint directory every
    /// `checkpoint_every` epochs when a directory is given.
    pub fn run(
        &mut self,
        ds: &ClimateDataset,
        checkpoint_dir: Option<&Path>,
    ) -> Result<TrainOutput> {
        let u = self.gen.cfg.lag_u;
        let mut history = Vec::new();
        let mut final_norms = Vec::new();
        let mut final_gp = 0.0f32;

        let start = self.epoch;
        for epoch in start..self.cfg.epochs {
            let last_epoch = epoch + 1 == self.cfg.epochs;
            let stats =
                self.run_epoch(ds, u, epoch, last_epoch, &mut final_norms, &mut final_gp)?;
            history.push(stats);
            self.epoch = epoch + 1;
            if let (Some(dir), true) = (checkpoint_dir, self.cfg.checkpoint_every > 0) {
                if (epoch + 1) % self.cfg.checkpoint_every == 0 && !last_epoch {
                    self.save_checkpoint(&dir.join(format!("epoch_{:05}", epoch + 1)))?;
                }
            }
        }
        Ok(TrainOutput {
            gen: self.gen.clone(),
            critic: self.critic.clone(),
            history,
            final_grad_norms: final_norms,
            final_gp_mean: final_gp,
            critic_updates: self.opt_c.t,
            gen_updates: self.opt_g.t,
        })
    }

    fn run_epoch(
        &mut self,
        ds: &ClimateDataset,
        u: usize,
        epoch: usize,
        collect_norms: bool,
        norms_sink: &mut Vec<f32>,
        gp_sink: &mut f32,
    ) -> Result<EpochStats> {
        let mut targets = ds.targets_in(Split::Train, u);
        shuffle(&mut targets, &mut self.rngs.shuffle);
        let batches: Vec<&[usize]> = targets.chunks_exact(self.cfg.batch_size).collect();
        if batches.is_empty() {
            return Err(TrainError::Config(format!(
                "training split yields no full batches of {}",
                self.cfg.batch_size
            )));
        }

        let mut c_losses = Vec::new();
        let mut gps = Vec::new();
        let mut g_losses = Vec::new();
        let mut recs = Vec::new();
        let mut feats = Vec::new();

        for batch in &batches {
            let ctx = ContextBatch::from_dataset(ds, batch, u)?;
            let real = ContextBatch::targets_tensor(ds, batch);

            // ── critic update ────────────────────────────────────────
            self.critic.power_iterate_all();
            let tape = Tape::new();
            let watched_c = self.critic.watched(&tape);
            let fake = {
                let mut fwd = Forward {
                    mode: Mode::Train,
                    tape: None,
                    rng: &mut self.rngs.forward,
                    bn_updates: None,
                };
                generator_forward(&self.gen, &ctx, &mut fwd)?
            };
            let parts = critic_loss(
                &real,
                &fake,
                &ctx.channels,
                &watched_c,
                &self.cfg,
                &tape,
                &mut self.rngs.augment,
                &mut self.rngs.gp,
            )?;
            let c_loss = parts.total.item();
            if !c_loss.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    step: self.batch_counter as usize,
                    critic_loss: c_loss,
                    gen_loss: f32::NAN,
                    batch: batch.to_vec(),
                });
            }
            let grads = collect_grads(&parts.total, &watched_c)?;
            self.opt_c.step(&mut self.critic, &grads);
            c_losses.push(c_loss);
            gps.push(parts.gp);
            if collect_norms {
                norms_sink.extend_from_slice(&parts.grad_norms);
            }
            drop(tape);
            self.batch_counter += 1;

            // ── generator update after every critic_steps-th batch ───
            if self
                .batch_counter
                .is_multiple_of(self.cfg.critic_steps as u64)
            {
                let tape = Tape::new();
                let watched_g = self.gen.watched(&tape);
                let mut bn = Vec::new();
                let fake = {
                    let mut fwd = Forward::train(&tape, &mut self.rngs.forward, &mut bn);
                    generator_forward(&watched_g, &ctx, &mut fwd)?
                };
                let parts = generator_loss(
                    &fake,
                    &real,
                    &ctx.channels,
                    &self.critic,
                    &self.cfg,
                    &mut self.rngs.augment,
                )?;
                let g_loss = parts.total.item();
                if !g_loss.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch,
                        step: self.batch_counter as usize,
                        critic_loss: c_loss,
                        gen_loss: g_loss,
                        batch: batch.to_vec(),
                    });
                }
                let grads = collect_grads(&parts.total, &watched_g)?;
                self.opt_g.step(&mut self.gen, &grads);
                apply_bn_updates(&mut self.gen, &bn);
                g_losses.push(g_loss);
                recs.push(parts.reconstruction);
                feats.push(parts.feature_matching);
            }
        }

        if collect_norms && !gps.is_empty() {
            *gp_sink = mean(&gps);
        }
        Ok(EpochStats {
            epoch,
            critic_loss: mean(&c_losses),
            gen_loss: mean(&g_losses),
            gp: mean(&gps),
            rec: mean(&recs),
            feat: mean(&feats),
            lr: self.opt_g.current_lr(),
        })
    }

    // ── checkpointing ────────────────────────────────────────────────

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.gen.save(&dir.join("gen.swg"))?;
        self.critic.save(&dir.join("critic.swg"))?;
        swigan_tensor::container::save_tensors(&dir.join("opt_g.swg"), &self.opt_g.state_tensors())
            .map_err(TrainError::Tensor)?;
        swigan_tensor::container::save_tensors(&dir.join("opt_c.swg"), &self.opt_c.state_tensors())
            .map_err(TrainError::Tensor)?;
        let mut state = String::new();
        state.push_str(&format!("epoch={}\n", self.epoch));
        state.push_str(&format!("batch_counter={}\n", self.batch_counter));
        state.push_str(&format!("opt_g_t={}\n", self.opt_g.t));
        state.push_str(&format!("opt_c_t={}\n", self.opt_c.t));
        for (name, rng) in [
            ("shuffle", &self.rngs.shuffle),
            ("forward", &self.rngs.forward),
            ("augment", &self.rngs.augment),
            ("gp", &self.rngs.gp),
        ] {
            let pos = rng.get_word_pos();
            state.push_str(&format!("rng_{name}_hi={}\n", (pos >> 64) as u64));
            state.push_str(&format!("rng_{name}_lo={}\n", pos as u64));
        }
        fs::write(dir.join("state.txt"), state)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        self.gen.load_into(&dir.join("gen.swg"))?;
        self.critic.load_into(&dir.join("critic.swg"))?;
        let kv = read_state(&dir.join("state.txt"))?;
        let get = |k: &str| -> Result<u64> {
            kv.get(k)
                .ok_or_else(|| TrainError::Checkpoint(format!("state.txt missing {k}")))?
                .parse()
                .map_err(|_| TrainError::Checkpoint(format!("bad value for {k}")))
        };
        self.epoch = get("epoch")? as usize;
        self.batch_counter = get("batch_counter")?;
        let g_state = swigan_tensor::container::load_tensors(&dir.join("opt_g.swg"))
            .map_err(TrainError::Tensor)?;
        self.opt_g.restore_state(g_state, get("opt_g_t")? as usize);
        let c_state = swigan_tensor::container::load_tensors(&dir.join("opt_c.swg"))
            .map_err(TrainError::Tensor)?;
        self.opt_c.restore_state(c_state, get("opt_c_t")? as usize);
        for (name, rng) in [
            ("shuffle", &mut self.rngs.shuffle),
            ("forward", &mut self.rngs.forward),
            ("augment", &mut self.rngs.augment),
            ("gp", &mut self.rngs.gp),
        ] {
            let hi = get(&format!("rng_{name}_hi"))?;
            let lo = get(&format!("rng_{name}_lo"))?;
            rng.set_word_pos(((hi as u128) << 64) | lo as u128);
        }
        Ok(())
    }
}

/// Train from scratch: the spec-level entry point.
pub fn train(
    ds: &ClimateDataset,
    gen_cfg: &GeneratorConfig,
    critic_cfg: &CriticConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(ds, gen_cfg, critic_cfg, cfg)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutput {
            gen: trainer.gen.clone(),
            critic: trainer.critic.clone(),
            history: Vec::new(),
            final_grad_norms: Vec::new(),
            final_gp_mean: 0.0,
            critic_updates: 0,
            gen_updates: 0,
        });
    }
    trainer.run(ds, checkpoint_dir)
}

fn validate_dataset(ds: &ClimateDataset, gen_cfg: &GeneratorConfig) -> Result<()> {
    if ds.norm.is_none() {
        return Err(TrainError::Config(
            "dataset must be normalized before training".into(),
        ));
    }
    if ds.grid_h != gen_cfg.grid_h || ds.grid_w != gen_cfg.grid_w {
        return Err(TrainError::Config(format!(
            "dataset grid {}x{} does not match generator config {}x{}",
            ds.grid_h, ds.grid_w, gen_cfg.grid_h, gen_cfg.grid_w
        )));
    }
    if ds.n_covariates() != gen_cfg.n_covariates {
        return Err(TrainError::Config(format!(
            "dataset has {} covariates, generator config expects {}",
            ds.n_covariates(),
            gen_cfg.n_covariates
        )));
    }
    Ok(())
}

fn step_budget(
    ds: &ClimateDataset,
    gen_cfg: &GeneratorConfig,
    cfg: &TrainConfig,
) -> (usize, usize) {
    let per_epoch = ds.targets_in(Split::Train, gen_cfg.lag_u).len() / cfg.batch_size;
    let critic_total = (per_epoch * cfg.epochs).max(1);
    let gen_total = (critic_total / cfg.critic_steps).max(1);
    (critic_total, gen_total)
}

fn collect_grads<P: ParamSet>(
    loss: &GridTensor,
    watched: &P,
) -> Result<HashMap<String, GridTensor>> {
    let flat = watched.flatten();
    let trainable: Vec<(String, GridTensor)> = flat
        .into_iter()
        .filter(|(_, _, k)| *k == ParamKind::Trainable)
        .map(|(n, t, _)| (n, t))
        .collect();
    let refs: Vec<&GridTensor> = trainable.iter().map(|(_, t)| t).collect();
    let grads = grad_quiet(loss, &refs, false, false)?;
    Ok(trainable.into_iter().map(|(n, _)| n).zip(grads).collect())
}

fn apply_bn_updates(params: &mut GeneratorParams, updates: &[BnUpdate]) {
    let mut by_path: HashMap<&str, &BnUpdate> = HashMap::new();
    for upd in updates {
        by_path.insert(upd.path.as_str(), upd);
    }
    params.visit_mut(&mut |name, t, kind| {
        if kind != ParamKind::Buffer {
            return;
        }
        let (path, field) = match name.rsplit_once('.') {
            Some(pair) => pair,
            None => return,
        };
        let Some(upd) = by_path.get(path) else { return };
        let src = match field {
            "bn_rmean" => &upd.mean,
            "bn_rvar" => &upd.var,
            _ => return,
        };
        let mixed: Vec<f32> = t
            .data()
            .iter()
            .zip(src)
            .map(|(old, new)| (1.0 - BN_MOMENTUM) * old + BN_MOMENTUM * new)
            .collect();
        *t = GridTensor::from_vec(t.shape().to_vec(), mixed);
    });
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

fn mean(v: &[f32]) -> f32 {
    if v.is_empty() {
        return f32::NAN;
    }
    v.iter().sum::<f32>() / v.len() as f32
}

fn read_state(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}
