//! AdamW with decoupled weight decay and a cosine annealing schedule.

use std::collections::HashMap;

use swigan_model::{ParamKind, ParamSet};
use swigan_tensor::GridTensor;

/// lr(step) = lr_max * 0.5 * (1 + cos(pi * step / (total - 1))): full rate at
/// step 0, annealed to zero at the last step.
pub fn cosine_lr(lr_max: f32, step: usize, total_steps: usize) -> f32 {
    if total_steps <= 1 {
        return lr_max;
    }
    let t = (step.min(total_steps - 1)) as f32 / (total_steps - 1) as f32;
    lr_max * 0.5 * (1.0 + (std::f32::consts::PI * t).cos())
}

pub struct AdamW {
    pub lr_max: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub total_steps: usize,
    /// Completed steps (also drives the schedule).
    pub t: usize,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(lr_max: f32, weight_decay: f32, beta1: f32, beta2: f32, total_steps: usize) -> Self {
        Self {
            lr_max,
            weight_decay,
            beta1,
            beta2,
            eps: 1e-8,
            total_steps,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn current_lr(&self) -> f32 {
        cosine_lr(self.lr_max, self.t, self.total_steps)
    }

    /// One update. `grads` maps parameter names (the ParamSet's own paths) to
    /// gradient tensors. The weight decay is decoupled: applied directly to
    /// the parameter, scaled by the scheduled learning rate.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &HashMap<String, GridTensor>) {
        let lr = cosine_lr(self.lr_max, self.t, self.total_steps);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        params.visit_params(&mut |name, tensor, kind| {
            if kind != ParamKind::Trainable {
                return;
            }
            let Some(g) = grads.get(&name) else { return };
            let n = tensor.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name).or_insert_with(|| vec![0.0; n]);
            let gd = g.data();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gd[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let theta = tensor.data()[i];
                out.push(
                    theta - lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta),
                );
            }
            *tensor = GridTensor::from_vec(tensor.shape().to_vec(), out);
        });
    }

    /// Moment state as named tensors for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, GridTensor)> {
        let mut out = Vec::new();
        let mut names: Vec<&String> = self.m.keys().collect();
        names.sort();
        for name in names {
            out.push((
                format!("m.{name}"),
                GridTensor::from_vec(vec![self.m[name].len()], self.m[name].clone()),
            ));
            out.push((
                format!("v.{name}"),
                GridTensor::from_vec(vec![self.v[name].len()], self.v[name].clone()),
            ));
        }
        out
    }

    pub fn restore_state(&mut self, entries: Vec<(String, GridTensor)>, t: usize) {
        self.m.clear();
        self.v.clear();
        for (name, tensor) in entries {
            if let Some(p) = name.strip_prefix("m.") {
                self.m.insert(p.to_string(), tensor.to_vec());
            } else if let Some(p) = name.strip_prefix("v.") {
                self.v.insert(p.to_string(), tensor.to_vec());
            }
        }
        self.t = t;
    }
}
