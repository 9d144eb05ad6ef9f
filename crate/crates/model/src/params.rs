//! Parameter containers, Glorot initialization, and flat serialization.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swigan_tensor::{container, GridTensor, Tape};

use crate::config::{ConfigError, CriticConfig, GeneratorConfig, StagePlan};
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamKind {
    /// Updated by the optimizer, receives gradients.
    Trainable,
    /// Persistent state (batch-norm running stats, power-iteration vectors).
    Buffer,
}

pub type Visitor<'a> = dyn FnMut(String, &mut GridTensor, ParamKind) + 'a;

/// conv/tconv weight + bias + batch norm + optional learnable noise scale.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub w: GridTensor,
    pub b: GridTensor,
    pub bn_gamma: GridTensor,
    pub bn_beta: GridTensor,
    pub bn_rmean: GridTensor,
    pub bn_rvar: GridTensor,
    pub noise_scale: Option<GridTensor>,
}

impl ConvUnit {
    fn init(rng: &mut ChaCha8Rng, w_shape: Vec<usize>, out_ch: usize, noise: bool) -> Self {
        Self {
            w: glorot(rng, w_shape),
            b: GridTensor::zeros(vec![out_ch]),
            bn_gamma: GridTensor::full(vec![out_ch], 1.0),
            bn_beta: GridTensor::zeros(vec![out_ch]),
            bn_rmean: GridTensor::zeros(vec![out_ch]),
            bn_rvar: GridTensor::full(vec![out_ch], 1.0),
            noise_scale: noise.then(|| GridTensor::full(vec![1], 0.1)),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut Visitor) {
        f(format!("{prefix}.w"), &mut self.w, ParamKind::Trainable);
        f(format!("{prefix}.b"), &mut self.b, ParamKind::Trainable);
        f(
            format!("{prefix}.bn_gamma"),
            &mut self.bn_gamma,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.bn_beta"),
            &mut self.bn_beta,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.bn_rmean"),
            &mut self.bn_rmean,
            ParamKind::Buffer,
        );
        f(
            format!("{prefix}.bn_rvar"),
            &mut self.bn_rvar,
            ParamKind::Buffer,
        );
        if let Some(ns) = &mut self.noise_scale {
            f(format!("{prefix}.noise"), ns, ParamKind::Trainable);
        }
    }
}

/// Concurrent spatial and channel squeeze-excitation parameters.
#[derive(Clone, Debug)]
pub struct ScseParams {
    pub fc1_w: GridTensor,
    pub fc1_b: GridTensor,
    pub fc2_w: GridTensor,
    pub fc2_b: GridTensor,
    pub sp_w: GridTensor,
    pub sp_b: GridTensor,
}

impl ScseParams {
    fn init(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let hidden = (channels / 2).max(1);
        Self {
            fc1_w: glorot(rng, vec![channels, hidden]),
            fc1_b: GridTensor::zeros(vec![hidden]),
            fc2_w: glorot(rng, vec![hidden, channels]),
            fc2_b: GridTensor::zeros(vec![channels]),
            sp_w: glorot(rng, vec![1, channels, 1, 1]),
            sp_b: GridTensor::zeros(vec![1]),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut Visitor) {
        f(
            format!("{prefix}.fc1_w"),
            &mut self.fc1_w,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.fc1_b"),
            &mut self.fc1_b,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.fc2_w"),
            &mut self.fc2_w,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.fc2_b"),
            &mut self.fc2_b,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.sp_w"),
            &mut self.sp_w,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.sp_b"),
            &mut self.sp_b,
            ParamKind::Trainable,
        );
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStage {
    /// 1x1 projection, no bias: the residual shortcut.
    pub proj_w: GridTensor,
    pub conv1: ConvUnit,
    pub conv2: ConvUnit,
    pub scse: ScseParams,
    /// 2x2 stride-2 downsample.
    pub down: ConvUnit,
}

impl EncoderStage {
    fn visit_mut(&mut self, prefix: &str, f: &mut Visitor) {
        f(
            format!("{prefix}.proj.w"),
            &mut self.proj_w,
            ParamKind::Trainable,
        );
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), f);
        self.scse.visit_mut(&format!("{prefix}.scse"), f);
        self.down.visit_mut(&format!("{prefix}.down"), f);
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    /// Upscaling shortcut: plain 2x2 stride-2 transposed conv.
    pub short_w: GridTensor,
    pub short_b: GridTensor,
    /// Main-branch transposed conv (with norm, activation, noise).
    pub up: ConvUnit,
    pub conv1: ConvUnit,
    pub conv2: ConvUnit,
    pub scse: ScseParams,
}

impl DecoderStage {
    fn visit_mut(&mut self, prefix: &str, f: &mut Visitor) {
        f(
            format!("{prefix}.short.w"),
            &mut self.short_w,
            ParamKind::Trainable,
        );
        f(
            format!("{prefix}.short.b"),
            &mut self.short_b,
            ParamKind::Trainable,
        );
        self.up.visit_mut(&format!("{prefix}.up"), f);
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), f);
        self.scse.visit_mut(&format!("{prefix}.scse"), f);
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub cfg: GeneratorConfig,
    pub plan: StagePlan,
    /// Month embedding table, 12 x embed_dim.
    pub embed: GridTensor,
    pub encoder: Vec<EncoderStage>,
    pub center1: ConvUnit,
    pub center2: ConvUnit,
    pub decoder: Vec<DecoderStage>,
    pub head_w: GridTensor,
    pub head_b: GridTensor,
}

impl GeneratorParams {
    pub fn init(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let plan = cfg.plan()?;
        let mut encoder = Vec::with_capacity(plan.encoder.len());
        for st in &plan.encoder {
            let (ci, co) = (st.in_channels, st.out_channels);
            encoder.push(EncoderStage {
                proj_w: glorot(rng, vec![co, ci, 1, 1]),
                conv1: ConvUnit::init(rng, vec![co, ci, 3, 3], co, true),
                conv2: ConvUnit::init(rng, vec![co, co, 3, 3], co, true),
                scse: ScseParams::init(rng, co),
                down: ConvUnit::init(rng, vec![co, co, 2, 2], co, false),
            });
        }
        let cc = plan.center_channels;
        let center1 = ConvUnit::init(rng, vec![cc, cc, 1, 1], cc, false);
        let center2 = ConvUnit::init(rng, vec![cc, cc, 1, 1], cc, false);
        let mut decoder = Vec::with_capacity(plan.decoder.len());
        for st in &plan.decoder {
            let (ci, co, sk) = (st.in_channels, st.out_channels, st.skip_channels);
            decoder.push(DecoderStage {
                // transposed conv weights are [C_in, F, k, k]
                short_w: glorot(rng, vec![ci, co, 2, 2]),
                short_b: GridTensor::zeros(vec![co]),
                up: ConvUnit::init(rng, vec![ci, co, 2, 2], co, true),
                conv1: ConvUnit::init(rng, vec![co, co + sk, 3, 3], co, true),
                conv2: ConvUnit::init(rng, vec![co, co, 3, 3], co, true),
                scse: ScseParams::init(rng, co),
            });
        }
        let head_in = plan.decoder.last().map(|d| d.out_channels).unwrap();
        Ok(Self {
            cfg: cfg.clone(),
            plan,
            embed: glorot(rng, vec![12, cfg.embed_dim]),
            encoder,
            center1,
            center2,
            decoder,
            head_w: glorot(rng, vec![1, head_in, 1, 1]),
            head_b: GridTensor::zeros(vec![1]),
        })
    }

    pub fn visit_mut(&mut self, f: &mut Visitor) {
        f("embed".to_string(), &mut self.embed, ParamKind::Trainable);
        for (k, st) in self.encoder.iter_mut().enumerate() {
            st.visit_mut(&format!("enc{k}"), f);
        }
        self.center1.visit_mut("center.conv1", f);
        self.center2.visit_mut("center.conv2", f);
        for (k, st) in self.decoder.iter_mut().enumerate() {
            st.visit_mut(&format!("dec{k}"), f);
        }
        f("head.w".to_string(), &mut self.head_w, ParamKind::Trainable);
        f("head.b".to_string(), &mut self.head_b, ParamKind::Trainable);
    }
}

/// One spectrally normalized critic conv with persistent power-iteration
/// vectors and optional instance-norm affine parameters.
#[derive(Clone, Debug)]
pub struct SnConv {
    pub w: GridTensor,
    pub b: GridTensor,
    pub u: GridTensor,
    pub v: GridTensor,
    pub in_gamma: Option<GridTensor>,
    pub in_beta: Option<GridTensor>,
}

impl SnConv {
    /// Wrap an existing weight with freshly initialized power-iteration state.
    pub fn from_weight(w: GridTensor, norm: bool, rng: &mut ChaCha8Rng) -> Self {
        let out = w.shape()[0];
        let rest: usize = w.shape()[1..].iter().product();
        let mut sn = Self {
            b: GridTensor::zeros(vec![out]),
            u: GridTensor::from_vec(vec![out], rand_unit(rng, out)),
            v: GridTensor::from_vec(vec![rest], rand_unit(rng, rest)),
            in_gamma: norm.then(|| GridTensor::full(vec![out], 1.0)),
            in_beta: norm.then(|| GridTensor::zeros(vec![out])),
            w,
        };
        sn.power_iterate();
        sn
    }

    fn init(rng: &mut ChaCha8Rng, w_shape: Vec<usize>, norm: bool) -> Self {
        let out = w_shape[0];
        let rest: usize = w_shape[1..].iter().product();
        let w = glorot(rng, w_shape);
        let u = rand_unit(rng, out);
        let v = rand_unit(rng, rest);
        let mut sn = Self {
            w,
            b: GridTensor::zeros(vec![out]),
            u: GridTensor::from_vec(vec![out], u),
            v: GridTensor::from_vec(vec![rest], v),
            in_gamma: norm.then(|| GridTensor::full(vec![out], 1.0)),
            in_beta: norm.then(|| GridTensor::zeros(vec![out])),
        };
        // A first iteration aligns (u, v) so sigma-hat is non-negative.
        sn.power_iterate();
        sn
    }

    /// One power-iteration step on the persistent (u, v) state.
    pub fn power_iterate(&mut self) {
        let out = self.u.numel();
        let rest = self.v.numel();
        let w = self.w.data();
        let u = self.u.data().to_vec();
        // v <- normalize(W^T u)
        let mut v = vec![0.0f32; rest];
        for i in 0..out {
            let ui = u[i];
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += w[i * rest + j] * ui;
            }
        }
        normalize_in_place(&mut v);
        // u <- normalize(W v)
        let mut nu = vec![0.0f32; out];
        for (i, nui) in nu.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, vj) in v.iter().enumerate() {
                s += w[i * rest + j] * vj;
            }
            *nui = s;
        }
        normalize_in_place(&mut nu);
        self.u = GridTensor::from_vec(vec![out], nu);
        self.v = GridTensor::from_vec(vec![rest], v);
    }

    /// Current spectral-norm estimate u^T W v.
    pub fn sigma_hat(&self) -> f32 {
        let out = self.u.numel();
        let rest = self.v.numel();
        let (w, u, v) = (self.w.data(), self.u.data(), self.v.data());
        let mut s = 0.0;
        for i in 0..out {
            let mut row = 0.0;
            for j in 0..rest {
                row += w[i * rest + j] * v[j];
            }
            s += u[i] * row;
        }
        s
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut Visitor) {
        f(format!("{prefix}.w"), &mut self.w, ParamKind::Trainable);
        f(format!("{prefix}.b"), &mut self.b, ParamKind::Trainable);
        f(format!("{prefix}.sn_u"), &mut self.u, ParamKind::Buffer);
        f(format!("{prefix}.sn_v"), &mut self.v, ParamKind::Buffer);
        if let Some(g) = &mut self.in_gamma {
            f(format!("{prefix}.in_gamma"), g, ParamKind::Trainable);
        }
        if let Some(b) = &mut self.in_beta {
            f(format!("{prefix}.in_beta"), b, ParamKind::Trainable);
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticParams {
    pub cfg: CriticConfig,
    /// Channels of the critic input: the tested map plus its context stack.
    pub in_channels: usize,
    pub base: Vec<SnConv>,
    pub frame: Vec<SnConv>,
    pub patch: Vec<SnConv>,
}

impl CriticParams {
    pub fn init(cfg: &CriticConfig, in_channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let build = |rng: &mut ChaCha8Rng, specs: &[crate::config::ConvSpec], mut c_in: usize| {
            let mut out = Vec::with_capacity(specs.len());
            for s in specs {
                out.push(SnConv::init(
                    rng,
                    vec![s.filters, c_in, s.kernel, s.kernel],
                    s.instance_norm,
                ));
                c_in = s.filters;
            }
            out
        };
        let base = build(rng, &cfg.base, in_channels);
        let base_out = cfg.base.last().map(|s| s.filters).ok_or_else(|| {
            ModelError::Config(ConfigError::Invalid("critic base has no layers".into()))
        })?;
        let frame = build(rng, &cfg.frame, base_out);
        let patch = build(rng, &cfg.patch, base_out);
        Ok(Self {
            cfg: cfg.clone(),
            in_channels,
            base,
            frame,
            patch,
        })
    }

    pub fn visit_mut(&mut self, f: &mut Visitor) {
        for (k, c) in self.base.iter_mut().enumerate() {
            c.visit_mut(&format!("base{k}"), f);
        }
        for (k, c) in self.frame.iter_mut().enumerate() {
            c.visit_mut(&format!("frame{k}"), f);
        }
        for (k, c) in self.patch.iter_mut().enumerate() {
            c.visit_mut(&format!("patch{k}"), f);
        }
    }

    /// One power-iteration step on every conv's (u, v); call once per
    /// training step before the critic forward passes.
    pub fn power_iterate_all(&mut self) {
        for c in self
            .base
            .iter_mut()
            .chain(&mut self.frame)
            .chain(&mut self.patch)
        {
            c.power_iterate();
        }
    }
}

// ── Shared plumbing over visit_mut ──────────────────────────────────────

pub trait ParamSet: Clone {
    fn visit_params(&mut self, f: &mut Visitor);

    /// Ordered (name, tensor, kind) snapshot; tensors are cheap handles.
    fn flatten(&self) -> Vec<(String, GridTensor, ParamKind)> {
        let mut c = self.clone();
        let mut out = Vec::new();
        c.visit_params(&mut |name, t, kind| out.push((name, t.clone(), kind)));
        out
    }

    /// A copy whose trainable tensors are watched on `tape` (buffers stay
    /// detached and enter the graph as constants on use).
    fn watched(&self, tape: &Tape) -> Self {
        let mut c = self.clone();
        c.visit_params(&mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                *t = tape.watch(t);
            }
        });
        c
    }

    /// Replace trainable tensors by name. Panics on shape mismatch: the
    /// update values come from this process's own flatten order.
    fn assign_trainable(&mut self, updates: &std::collections::HashMap<String, GridTensor>) {
        self.visit_params(&mut |name, t, kind| {
            if kind == ParamKind::Trainable {
                if let Some(nt) = updates.get(&name) {
                    assert_eq!(nt.shape(), t.shape(), "shape changed for {name}");
                    *t = nt.detach();
                }
            }
        });
    }

    fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, GridTensor)> =
            self.flatten().into_iter().map(|(n, t, _)| (n, t)).collect();
        container::save_tensors(path, &entries)?;
        Ok(())
    }

    /// Fill every tensor (trainable and buffer) from a container file.
    fn load_into(&mut self, path: &Path) -> Result<()> {
        let entries = container::load_tensors(path)?;
        let mut map: std::collections::HashMap<String, GridTensor> = entries.into_iter().collect();
        let mut missing = Vec::new();
        self.visit_params(&mut |name, t, _| match map.remove(&name) {
            Some(nt) => {
                if nt.shape() == t.shape() {
                    *t = nt;
                } else {
                    missing.push(format!(
                        "{name} (shape {:?} vs {:?})",
                        nt.shape(),
                        t.shape()
                    ));
                }
            }
            None => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(ModelError::Load(format!(
                "parameter file {path:?} is missing or mismatched: {missing:?}"
            )));
        }
        if !map.is_empty() {
            let extra: Vec<&String> = map.keys().collect();
            return Err(ModelError::Load(format!(
                "unexpected tensors in {path:?}: {extra:?}"
            )));
        }
        Ok(())
    }
}

impl ParamSet for GeneratorParams {
    fn visit_params(&mut self, f: &mut Visitor) {
        self.visit_mut(f)
    }
}

impl ParamSet for CriticParams {
    fn visit_params(&mut self, f: &mut Visitor) {
        self.visit_mut(f)
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> GridTensor {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[0], shape[1]),
        4 => {
            let rf = shape[2] * shape[3];
            (shape[1] * rf, shape[0] * rf)
        }
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    };
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.gen::<f32>() * 2.0 - 1.0) * limit)
        .collect();
    GridTensor::from_vec(shape, data)
}

fn rand_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    normalize_in_place(&mut v);
    v
}

fn normalize_in_place(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    for x in v {
        *x /= norm;
    }
}
