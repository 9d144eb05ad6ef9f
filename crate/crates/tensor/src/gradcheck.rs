//! Finite-difference oracle for gradients.
//!
//! Analytic gradients run in f32 on the tape; the oracle replays the recorded
//! computation in f64 with perturbed leaves (central differences, h = 1e-3).
//! Because retained backward passes are ordinary tape ops, the same replay
//! also checks second-order quantities such as gradient norms.

use std::collections::HashMap;

use crate::tape::Tape;
use crate::tensor::{grad, GridTensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    pub rel_tol: f64,
    /// Absolute slack for near-zero gradients (the analytic side is f32).
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-3,
            rel_tol: 1e-3,
            abs_tol: 1e-4,
        }
    }
}

impl GradCheck {
    pub fn with_tol(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            h: 1e-3,
            rel_tol,
            abs_tol,
        }
    }

    /// Check d(build(inputs))/d(inputs) against central finite differences.
    ///
    /// `build` must produce a scalar from the watched leaves; it may itself
    /// call `grad(.., retain_graph = true)`, in which case this verifies a
    /// second-order derivative.
    pub fn check<E: std::fmt::Display>(
        &self,
        inputs: &[GridTensor],
        build: impl Fn(&Tape, &[GridTensor]) -> std::result::Result<GridTensor, E>,
    ) -> std::result::Result<(), String> {
        let tape = Tape::new();
        let leaves: Vec<GridTensor> = inputs.iter().map(|t| tape.watch(t)).collect();
        let leaf_ids: Vec<usize> = leaves.iter().map(|l| l.node_id().unwrap()).collect();
        let out = build(&tape, &leaves).map_err(|e| format!("build failed: {e}"))?;
        if out.numel() != 1 {
            return Err(format!("build must return a scalar, got {:?}", out.shape()));
        }
        let out_id = out.node_id().ok_or("output is not on the tape")?;

        let refs: Vec<&GridTensor> = leaves.iter().collect();
        let analytic = grad(&out, &refs, false).map_err(|e| format!("grad failed: {e}"))?;

        for (li, leaf) in leaves.iter().enumerate() {
            let base: Vec<f64> = leaf.data().iter().map(|&v| v as f64).collect();
            for ei in 0..base.len() {
                let mut plus = base.clone();
                plus[ei] += self.h;
                let mut minus = base.clone();
                minus[ei] -= self.h;

                let mut over = HashMap::new();
                over.insert(leaf_ids[li], plus);
                let f_plus = tape.replay_f64(&over, out_id)[0];
                over.insert(leaf_ids[li], minus);
                let f_minus = tape.replay_f64(&over, out_id)[0];

                let fd = (f_plus - f_minus) / (2.0 * self.h);
                let a = analytic[li].data()[ei] as f64;
                let err = (a - fd).abs();
                let tol = self.abs_tol + self.rel_tol * a.abs().max(fd.abs());
                if err > tol {
                    return Err(format!(
                        "gradcheck failed: input {li} element {ei}: analytic {a:.6e} vs fd {fd:.6e} (err {err:.3e} > tol {tol:.3e})"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic pseudo-random buffer for oracle inputs, uniform in
/// [-1, 1). Kept dependency-free so test crates can share it.
pub fn lcg_uniform(seed: u64, n: usize) -> Vec<f32> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            // take the top 24 bits for a clean mantissa
            let v = (state >> 40) as f32 / (1u64 << 24) as f32;
            v * 2.0 - 1.0
        })
        .collect()
}
