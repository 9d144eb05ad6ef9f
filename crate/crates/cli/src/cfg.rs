//! key=value configuration files with schema validation.
//!
//! Lines are `key = value`; `#` starts a comment. Every recognized key has a
//! default (the full-scale values), so an empty file is a valid paper-scale
//! configuration. Unknown keys are errors.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use swigan_data::{MonthStamp, SynthSpec};
use swigan_model::{CriticConfig, GeneratorConfig};
use swigan_risk::{CostForm, CostModel, RiskConfig};
use swigan_train::TrainConfig;

pub struct KvConfig {
    entries: Vec<(String, String)>,
    raw: String,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {path:?}"))?;
        Self::parse(raw)
    }

    pub fn parse(raw: String) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value, got `{line}`", i + 1))?;
            entries.push((k.trim().to_string(), v.trim().trim_matches('"').to_string()));
        }
        Ok(Self { entries, raw })
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            raw: String::new(),
        }
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.raw.as_bytes());
        format!("{:x}", h.finalize())
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.lookup(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| anyhow::anyhow!("bad value for {key}: {v} ({e})")),
        }
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.lookup(key).unwrap_or(default).to_string()
    }

    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.lookup(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| anyhow::anyhow!("bad value in {key}: {p}"))
                })
                .collect(),
        }
    }

    pub fn ensure_known(&self, schema: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            if !schema.contains(&k.as_str()) {
                bail!(
                    "unknown config key `{k}` (known keys: {})",
                    schema.join(", ")
                );
            }
        }
        Ok(())
    }
}

pub const TRAIN_SCHEMA: &[&str] = &[
    "preset",
    "grid_h",
    "grid_w",
    "padded",
    "stage_channels",
    "lag_u",
    "noise_dim",
    "embed_dim",
    "n_covariates",
    "dropout_rate",
    "leaky_slope",
    "critic_preset",
    "lambda_pen",
    "lambda_rec",
    "lambda_feat",
    "critic_steps",
    "batch_size",
    "epochs",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "checkpoint_every",
];

pub struct ResolvedTrainConfig {
    pub gen: GeneratorConfig,
    pub critic: CriticConfig,
    pub train: TrainConfig,
    pub critic_preset: String,
}

pub fn resolve_train_config(cfg: &KvConfig, seed: u64) -> Result<ResolvedTrainConfig> {
    cfg.ensure_known(TRAIN_SCHEMA)?;
    let preset = cfg.get_str("preset", "paper");
    let (gen0, train0) = match preset.as_str() {
        "paper" => (GeneratorConfig::paper(), TrainConfig::default()),
        "desk" => (GeneratorConfig::desk(), TrainConfig::desk()),
        other => bail!("unknown preset `{other}` (paper or desk)"),
    };
    let gen = GeneratorConfig {
        grid_h: cfg.get("grid_h", gen0.grid_h)?,
        grid_w: cfg.get("grid_w", gen0.grid_w)?,
        padded: cfg.get("padded", gen0.padded)?,
        stage_channels: cfg.get_usize_list("stage_channels", &gen0.stage_channels)?,
        lag_u: cfg.get("lag_u", gen0.lag_u)?,
        noise_dim: cfg.get("noise_dim", gen0.noise_dim)?,
        embed_dim: cfg.get("embed_dim", gen0.embed_dim)?,
        n_covariates: cfg.get("n_covariates", gen0.n_covariates)?,
        dropout_rate: cfg.get("dropout_rate", gen0.dropout_rate)?,
        leaky_slope: cfg.get("leaky_slope", gen0.leaky_slope)?,
    };
    let critic_preset = cfg.get_str("critic_preset", &preset);
    let critic = match critic_preset.as_str() {
        "paper" => CriticConfig::paper(),
        "desk" => CriticConfig::desk(),
        other => bail!("unknown critic_preset `{other}`"),
    };
    let train = TrainConfig {
        lambda_pen: cfg.get("lambda_pen", train0.lambda_pen)?,
        lambda_rec: cfg.get("lambda_rec", train0.lambda_rec)?,
        lambda_feat: cfg.get("lambda_feat", train0.lambda_feat)?,
        critic_steps: cfg.get("critic_steps", train0.critic_steps)?,
        batch_size: cfg.get("batch_size", train0.batch_size)?,
        epochs: cfg.get("epochs", train0.epochs)?,
        lr: cfg.get("lr", train0.lr)?,
        weight_decay: cfg.get("weight_decay", train0.weight_decay)?,
        beta1: cfg.get("beta1", train0.beta1)?,
        beta2: cfg.get("beta2", train0.beta2)?,
        seed,
        checkpoint_every: cfg.get("checkpoint_every", train0.checkpoint_every)?,
    };
    Ok(ResolvedTrainConfig {
        gen,
        critic,
        train,
        critic_preset,
    })
}

/// The resolved configuration echoed back out, so a run directory is
/// self-describing and `generate` can rebuild the architecture.
pub fn render_train_config(r: &ResolvedTrainConfig) -> String {
    let g = &r.gen;
    let t = &r.train;
    let channels: Vec<String> = g.stage_channels.iter().map(|c| c.to_string()).collect();
    format!(
        "grid_h={}\ngrid_w={}\npadded={}\nstage_channels={}\nlag_u={}\nnoise_dim={}\n\
         embed_dim={}\nn_covariates={}\ndropout_rate={}\nleaky_slope={}\ncritic_preset={}\n\
         lambda_pen={}\nlambda_rec={}\nlambda_feat={}\ncritic_steps={}\nbatch_size={}\n\
         epochs={}\nlr={}\nweight_decay={}\nbeta1={}\nbeta2={}\ncheckpoint_every={}\n",
        g.grid_h,
        g.grid_w,
        g.padded,
        channels.join(","),
        g.lag_u,
        g.noise_dim,
        g.embed_dim,
        g.n_covariates,
        g.dropout_rate,
        g.leaky_slope,
        r.critic_preset,
        t.lambda_pen,
        t.lambda_rec,
        t.lambda_feat,
        t.critic_steps,
        t.batch_size,
        t.epochs,
        t.lr,
        t.weight_decay,
        t.beta1,
        t.beta2,
        t.checkpoint_every,
    )
}

pub const SYNTH_SCHEMA: &[&str] = &[
    "grid_h",
    "grid_w",
    "n_months",
    "start_year",
    "start_month",
    "n_covariates",
    "train_months",
    "val_months",
    "ar_rho",
    "ar_sigma",
    "seasonal_amp",
    "bump_amp",
    "index_w0",
    "index_w1",
    "index_w2",
    "null_covariate",
    "scenario_months",
    "commune_rows",
    "commune_cols",
];

pub fn resolve_synth_spec(cfg: &KvConfig) -> Result<SynthSpec> {
    cfg.ensure_known(SYNTH_SCHEMA)?;
    let d = SynthSpec::desk();
    Ok(SynthSpec {
        grid_h: cfg.get("grid_h", d.grid_h)?,
        grid_w: cfg.get("grid_w", d.grid_w)?,
        n_months: cfg.get("n_months", d.n_months)?,
        start: MonthStamp::new(
            cfg.get("start_year", d.start.year)?,
            cfg.get("start_month", d.start.month)?,
        ),
        n_covariates: cfg.get("n_covariates", d.n_covariates)?,
        train_months: cfg.get("train_months", d.train_months)?,
        val_months: cfg.get("val_months", d.val_months)?,
        ar_rho: cfg.get("ar_rho", d.ar_rho)?,
        ar_sigma: cfg.get("ar_sigma", d.ar_sigma)?,
        seasonal_amp: cfg.get("seasonal_amp", d.seasonal_amp)?,
        bump_amp: cfg.get("bump_amp", d.bump_amp)?,
        index_weights: (
            cfg.get("index_w0", d.index_weights.0)?,
            cfg.get("index_w1", d.index_weights.1)?,
            cfg.get("index_w2", d.index_weights.2)?,
        ),
        null_covariate: cfg.get("null_covariate", d.null_covariate)?,
        scenario_months: cfg.get("scenario_months", d.scenario_months)?,
    })
}

pub const RISK_SCHEMA: &[&str] = &[
    "return_period_years",
    "pixel_fraction",
    "neighbor_fraction",
    "per_commune_costs",
    "cost_form",
    "cost_a",
    "cost_b",
    "var_level",
];

pub struct ResolvedRiskConfig {
    pub risk: RiskConfig,
    pub model: CostModel,
    pub var_level: f64,
}

pub fn resolve_risk_config(cfg: &KvConfig) -> Result<ResolvedRiskConfig> {
    cfg.ensure_known(RISK_SCHEMA)?;
    let d = RiskConfig::default();
    let form = match cfg.get_str("cost_form", "corrected").as_str() {
        "corrected" => CostForm::Corrected,
        "printed" => CostForm::Printed,
        other => bail!("unknown cost_form `{other}` (corrected or printed)"),
    };
    let base = CostModel::calibrated(form);
    Ok(ResolvedRiskConfig {
        risk: RiskConfig {
            return_period_years: cfg.get("return_period_years", d.return_period_years)?,
            pixel_fraction: cfg.get("pixel_fraction", d.pixel_fraction)?,
            neighbor_fraction: cfg.get("neighbor_fraction", d.neighbor_fraction)?,
            per_commune_costs: cfg.get("per_commune_costs", d.per_commune_costs)?,
        },
        model: CostModel {
            a: cfg.get("cost_a", base.a)?,
            b: cfg.get("cost_b", base.b)?,
            form,
        },
        var_level: cfg.get("var_level", 0.995)?,
    })
}
