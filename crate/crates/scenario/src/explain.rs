//! Permutation importance (Shapley-style): the increase in prediction error
//! after permuting a feature's values across the time axis of the test
//! contexts.
//!
//! Replicates are paired: the same noise streams drive the baseline and
//! every permuted run, so an identity permutation scores exactly zero and
//! score noise comes from the permutation draw alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swigan_data::{ClimateDataset, Split};
use swigan_model::{generator_forward, ContextBatch, Forward, GeneratorParams};

use crate::error::{Result, ScenarioError};

#[derive(Clone, Debug)]
pub struct CovariateScore {
    pub name: String,
    /// Mean MAE increase over permutations and trajectories (normalized
    /// index units).
    pub mean_delta: f64,
    /// Absolute-value score reported in the CSV output.
    pub score: f64,
    /// Spread of the per-permutation deltas.
    pub std_delta: f64,
}

#[derive(Clone, Debug)]
pub struct ImportanceReport {
    /// Baseline MAE of the unpermuted runs (the phi_0 of the additive view).
    pub baseline_mae: f64,
    pub covariates: Vec<CovariateScore>,
    /// Score of the lagged-index channel group, when included.
    pub index_lags: Option<CovariateScore>,
}

pub struct ImportanceRequest<'a> {
    pub gen: &'a GeneratorParams,
    /// Normalized dataset; importance runs over its test split.
    pub dataset: &'a ClimateDataset,
    pub n_permutations: usize,
    /// Generator draws per context set (the "trajectories" averaged over).
    pub n_trajectories: usize,
    pub seed: u64,
    /// Score the lagged index channels as one extra feature group.
    pub include_index_lags: bool,
}

/// Time window the test contexts read from: the earliest lag of the first
/// test target through the last test target.
fn test_window(ds: &ClimateDataset, u: usize) -> Result<(Vec<usize>, std::ops::Range<usize>)> {
    let targets = ds.targets_in(Split::Test, u);
    if targets.is_empty() {
        return Err(ScenarioError::Importance(
            "test split has no usable targets".into(),
        ));
    }
    let first = targets[0] - u;
    let last = *targets.last().unwrap();
    Ok((targets, first..last + 1))
}

pub fn covariate_importance(req: &ImportanceRequest) -> Result<ImportanceReport> {
    if req.n_permutations == 0 {
        return Err(ScenarioError::Importance(
            "n_permutations must be at least 1".into(),
        ));
    }
    let mut perm_rng = ChaCha8Rng::seed_from_u64(req.seed);
    perm_rng.set_stream(1);
    let u = req.gen.cfg.lag_u;
    let (_, window) = test_window(req.dataset, u)?;
    let perms: Vec<Vec<usize>> = (0..req.n_permutations)
        .map(|_| random_permutation(window.len(), &mut perm_rng))
        .collect();
    covariate_importance_with_perms(req, &perms)
}

/// Importance with explicit permutations (tests inject the identity).
/// Each permutation maps positions within the test window.
pub fn covariate_importance_with_perms(
    req: &ImportanceRequest,
    perms: &[Vec<usize>],
) -> Result<ImportanceReport> {
    let ds = req.dataset;
    let u = req.gen.cfg.lag_u;
    let (targets, window) = test_window(ds, u)?;

    let observed = ContextBatch::targets_tensor(ds, &targets);
    let baseline_preds = run_all(req, ds, &targets)?;
    let baseline_mae = mae(&baseline_preds, observed.data());

    let mut covariates = Vec::with_capacity(ds.n_covariates());
    for ci in 0..ds.n_covariates() {
        let mut deltas = Vec::with_capacity(perms.len());
        for perm in perms {
            let permuted = permute_variable(ds, Some(ci), perm, &window);
            let preds = run_all(req, &permuted, &targets)?;
            deltas.push(mae(&preds, observed.data()) - baseline_mae);
        }
        let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
        covariates.push(CovariateScore {
            name: ds.covariates[ci].name.clone(),
            mean_delta,
            score: mean_delta.abs(),
            std_delta: std(&deltas),
        });
    }

    let index_lags = if req.include_index_lags {
        let mut deltas = Vec::with_capacity(perms.len());
        for perm in perms {
            let permuted = permute_variable(ds, None, perm, &window);
            let preds = run_all(req, &permuted, &targets)?;
            deltas.push(mae(&preds, observed.data()) - baseline_mae);
        }
        let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
        Some(CovariateScore {
            name: "index_lags".into(),
            mean_delta,
            score: mean_delta.abs(),
            std_delta: std(&deltas),
        })
    } else {
        None
    };

    Ok(ImportanceReport {
        baseline_mae,
        covariates,
        index_lags,
    })
}

/// Per-source-pixel influence on one probe pixel: permute all covariates at
/// the source pixel across time (one shared draw), measure the mean absolute
/// change of the probe pixel's predictions, and report each pixel's score
/// relative to the probe's own.
pub fn spatial_importance(req: &ImportanceRequest, probe: (usize, usize)) -> Result<Vec<f64>> {
    let ds = req.dataset;
    let u = req.gen.cfg.lag_u;
    let (targets, window) = test_window(ds, u)?;
    let plane = ds.plane();
    let probe_idx = probe.0 * ds.grid_w + probe.1;
    if probe.0 >= ds.grid_h || probe.1 >= ds.grid_w {
        return Err(ScenarioError::Importance(format!(
            "probe {probe:?} outside the grid"
        )));
    }

    let mut perm_rng = ChaCha8Rng::seed_from_u64(req.seed);
    perm_rng.set_stream(2);
    let perm = random_permutation(window.len(), &mut perm_rng);

    let baseline = run_all(req, ds, &targets)?;

    let mut scores = vec![0.0f64; plane];
    #[allow(clippy::needless_range_loop)]
    for s in 0..plane {
        let permuted = permute_pixel(ds, s, &perm, &window);
        let preds = run_all(req, &permuted, &targets)?;
        // mean |delta| at the probe pixel over trajectories and months
        let mut acc = 0.0;
        let mut count = 0usize;
        for (base_run, perm_run) in baseline.iter().zip(&preds) {
            for (b, p) in base_run
                .chunks_exact(plane)
                .zip(perm_run.chunks_exact(plane))
            {
                acc += (b[probe_idx] as f64 - p[probe_idx] as f64).abs();
                count += 1;
            }
        }
        scores[s] = acc / count as f64;
    }

    let own = scores[probe_idx];
    if own <= 0.0 {
        return Err(ScenarioError::Importance(
            "probe pixel's own permutation has no effect; cannot normalize".into(),
        ));
    }
    Ok(scores.into_iter().map(|v| v / own).collect())
}

/// Teacher-forced generation over the test contexts, one prediction stack
/// per trajectory, with per-trajectory noise streams keyed off the seed.
fn run_all(
    req: &ImportanceRequest,
    ds: &ClimateDataset,
    targets: &[usize],
) -> Result<Vec<Vec<f32>>> {
    let ctx = ContextBatch::from_dataset(ds, targets, req.gen.cfg.lag_u)?;
    let mut out = Vec::with_capacity(req.n_trajectories);
    for j in 0..req.n_trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        rng.set_stream(10_000 + j as u64);
        let mut fwd = Forward::eval(&mut rng);
        out.push(generator_forward(req.gen, &ctx, &mut fwd)?.to_vec());
    }
    Ok(out)
}

fn mae(preds: &[Vec<f32>], observed: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for run in preds {
        for (p, o) in run.iter().zip(observed) {
            acc += (*p as f64 - *o as f64).abs();
            n += 1;
        }
    }
    acc / n as f64
}

/// Clone the dataset with one variable's rasters permuted across the window.
/// `Some(ci)` permutes a covariate; `None` permutes the index stack (the
/// lagged channels). Targets always come from the original dataset.
fn permute_variable(
    ds: &ClimateDataset,
    ci: Option<usize>,
    perm: &[usize],
    window: &std::ops::Range<usize>,
) -> ClimateDataset {
    let mut out = ds.clone();
    let plane = ds.plane();
    let stack = match ci {
        Some(i) => &mut out.covariates[i],
        None => &mut out.index,
    };
    let orig = stack.values.clone();
    for (pos, &src_pos) in perm.iter().enumerate() {
        let dst_t = window.start + pos;
        let src_t = window.start + src_pos;
        stack.values[dst_t * plane..(dst_t + 1) * plane]
            .copy_from_slice(&orig[src_t * plane..(src_t + 1) * plane]);
    }
    out
}

/// Clone the dataset with every covariate's values at one pixel permuted
/// across the window (the same permutation for all covariates).
fn permute_pixel(
    ds: &ClimateDataset,
    pixel: usize,
    perm: &[usize],
    window: &std::ops::Range<usize>,
) -> ClimateDataset {
    let mut out = ds.clone();
    let plane = ds.plane();
    for cov in &mut out.covariates {
        let orig = cov.values.clone();
        for (pos, &src_pos) in perm.iter().enumerate() {
            let dst_t = window.start + pos;
            let src_t = window.start + src_pos;
            cov.values[dst_t * plane + pixel] = orig[src_t * plane + pixel];
        }
    }
    out
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    p
}

fn std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}
