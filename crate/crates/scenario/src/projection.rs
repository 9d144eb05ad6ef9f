//! Iterative scenario generation: roll the trained generator forward month
//! by month under projected covariates, feeding its own outputs back in as
//! lagged index channels.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use swigan_data::{ClimateDataset, GridStack, MonthStamp, INDEX_NAME};
use swigan_model::{generator_forward, ContextBatch, Forward, GeneratorParams};
use swigan_tensor::GridTensor;

use crate::error::{Result, ScenarioError};

/// M independent simulated index trajectories over a projection horizon,
/// stored in index (SWI) units.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub scenario: String,
    /// First projected month (the month after the last observation).
    pub start: MonthStamp,
    pub horizon: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub master_seed: u64,
    /// Per-trajectory RNG stream ids (trajectory i uses stream `streams[i]`
    /// of the master seed).
    pub streams: Vec<u64>,
    /// Per trajectory: horizon * grid_h * grid_w values, month-major.
    pub trajectories: Vec<Vec<f32>>,
    /// Fraction of generated values clipped to the training index range.
    pub clamp_rate: f64,
}

impl TrajectoryEnsemble {
    pub fn plane(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn raster(&self, traj: usize, step: usize) -> &[f32] {
        let p = self.plane();
        &self.trajectories[traj][step * p..(step + 1) * p]
    }

    /// Pointwise mean across trajectories, per projected month.
    pub fn ensemble_mean(&self) -> Vec<f32> {
        let len = self.horizon * self.plane();
        let mut out = vec![0.0f64; len];
        for t in &self.trajectories {
            for (o, &v) in out.iter_mut().zip(t) {
                *o += v as f64;
            }
        }
        let m = self.trajectories.len() as f64;
        out.into_iter().map(|v| (v / m) as f32).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::from("trajectory,stream,file\n");
        for (i, t) in self.trajectories.iter().enumerate() {
            let file = format!("traj_{i:05}.grd");
            GridStack::new(INDEX_NAME, self.grid_h, self.grid_w, self.start, t.clone())
                .save(&dir.join(&file))?;
            manifest.push_str(&format!("{i},{},{file}\n", self.streams[i]));
        }
        fs::write(dir.join("manifest.csv"), manifest)?;
        let meta = format!(
            "scenario={}\nmaster_seed={}\nhorizon={}\nclamp_rate={}\n",
            self.scenario, self.master_seed, self.horizon, self.clamp_rate
        );
        fs::write(dir.join("ensemble.txt"), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join("ensemble.txt"))
            .map_err(|e| ScenarioError::Projection(format!("missing ensemble.txt: {e}")))?;
        let get = |k: &str| -> Result<String> {
            meta.lines()
                .find_map(|l| l.strip_prefix(&format!("{k}=")))
                .map(str::to_string)
                .ok_or_else(|| ScenarioError::Projection(format!("ensemble.txt missing {k}")))
        };
        let manifest = fs::read_to_string(dir.join("manifest.csv"))?;
        let mut streams = Vec::new();
        let mut trajectories = Vec::new();
        let mut dims = None;
        for line in manifest.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(ScenarioError::Projection(format!(
                    "bad manifest line: {line}"
                )));
            }
            let stack = GridStack::load(&dir.join(cols[2]))?;
            dims.get_or_insert((stack.grid_h, stack.grid_w, stack.start, stack.n_months()));
            streams.push(
                cols[1]
                    .parse()
                    .map_err(|_| ScenarioError::Projection(format!("bad stream: {line}")))?,
            );
            trajectories.push(stack.values);
        }
        let (grid_h, grid_w, start, horizon) = dims.ok_or_else(|| {
            ScenarioError::Projection("ensemble manifest has no trajectories".into())
        })?;
        Ok(Self {
            scenario: get("scenario")?,
            start,
            horizon,
            grid_h,
            grid_w,
            master_seed: get("master_seed")?.parse().unwrap_or(0),
            streams,
            trajectories,
            clamp_rate: get("clamp_rate")?.parse().unwrap_or(0.0),
        })
    }
}

/// One step's conditioning snapshot, for recursion audits.
#[derive(Clone, Debug)]
pub struct StepTrace {
    /// Step index k (1-based: the k-th projected month).
    pub step: usize,
    /// The lagged index channels fed to the generator, most recent first,
    /// in normalized space.
    pub index_lags: Vec<Vec<f32>>,
}

pub struct ProjectionRequest<'a> {
    pub gen: &'a GeneratorParams,
    /// Normalized observation history; its final month is T.
    pub history: &'a ClimateDataset,
    /// Raw (unnormalized) projected covariates covering at least the
    /// horizon, one stack per covariate in dataset order, starting at T+1.
    pub projected: &'a [GridStack],
    pub horizon: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub scenario: String,
}

/// Validate inputs and simulate M independent trajectories. Trajectory i
/// draws from stream i of the master seed, so parallel and serial execution
/// produce identical ensembles.
pub fn project(req: &ProjectionRequest) -> Result<TrajectoryEnsemble> {
    let (state0, norm_range) = prepare(req)?;
    let results: Vec<(Vec<f32>, usize)> = (0..req.n_trajectories)
        .into_par_iter()
        .map(|i| run_trajectory(req, &state0, norm_range, i as u64, None))
        .collect::<Result<_>>()?;

    let plane = req.history.plane();
    let total_values = (req.horizon * plane * req.n_trajectories).max(1);
    let clamped: usize = results.iter().map(|(_, c)| c).sum();
    Ok(TrajectoryEnsemble {
        scenario: req.scenario.clone(),
        start: req.history.start.plus(req.history.n_months),
        horizon: req.horizon,
        grid_h: req.history.grid_h,
        grid_w: req.history.grid_w,
        master_seed: req.seed,
        streams: (0..req.n_trajectories as u64).collect(),
        trajectories: results.into_iter().map(|(t, _)| t).collect(),
        clamp_rate: clamped as f64 / total_values as f64,
    })
}

/// Like `project`, but single trajectory with a full conditioning trace.
pub fn project_traced(req: &ProjectionRequest, stream: u64) -> Result<(Vec<f32>, Vec<StepTrace>)> {
    let (state0, norm_range) = prepare(req)?;
    let mut traces = Vec::new();
    let (t, _) = run_trajectory(req, &state0, norm_range, stream, Some(&mut traces))?;
    Ok((t, traces))
}

struct InitialState {
    /// Normalized projected covariates, stack-per-covariate, starting T+1.
    projected_norm: Vec<Vec<f32>>,
    /// Last u observed normalized index maps, most recent first.
    index_tail: Vec<Vec<f32>>,
}

fn prepare(req: &ProjectionRequest) -> Result<(InitialState, (f32, f32))> {
    let ds = req.history;
    let norm = ds
        .norm
        .as_ref()
        .ok_or_else(|| ScenarioError::Projection("history must be normalized".into()))?;
    let u = req.gen.cfg.lag_u;
    if ds.n_months < u {
        return Err(ScenarioError::Projection(format!(
            "history covers {} months, lag window needs {u}",
            ds.n_months
        )));
    }
    if req.horizon == 0 || req.n_trajectories == 0 {
        return Err(ScenarioError::Projection(
            "horizon and trajectory count must be positive".into(),
        ));
    }
    if req.projected.len() != ds.n_covariates() {
        return Err(ScenarioError::Projection(format!(
            "{} projected covariate stacks for {} dataset covariates",
            req.projected.len(),
            ds.n_covariates()
        )));
    }
    let t_plus_1 = ds.start.plus(ds.n_months);
    let plane = ds.plane();
    let mut projected_norm = Vec::with_capacity(req.projected.len());
    for (i, (stack, dsc)) in req.projected.iter().zip(&ds.covariates).enumerate() {
        if stack.name != dsc.name {
            return Err(ScenarioError::Projection(format!(
                "projected covariate {} is {}, dataset expects {}",
                i, stack.name, dsc.name
            )));
        }
        if stack.grid_h != ds.grid_h || stack.grid_w != ds.grid_w {
            return Err(ScenarioError::Projection(format!(
                "{}: grid mismatch",
                stack.name
            )));
        }
        if stack.start != t_plus_1 {
            return Err(ScenarioError::Projection(format!(
                "{} starts at {}, projection starts at {t_plus_1}",
                stack.name, stack.start
            )));
        }
        if stack.n_months() < req.horizon {
            return Err(ScenarioError::Projection(format!(
                "horizon {} exceeds projected coverage {} for {}",
                req.horizon,
                stack.n_months(),
                stack.name
            )));
        }
        let (mean, std) = norm.covariates[i];
        projected_norm.push(stack.values.iter().map(|v| (v - mean) / std).collect());
    }
    let index_tail: Vec<Vec<f32>> = (1..=u)
        .map(|lag| ds.index.raster(ds.n_months - lag).to_vec())
        .collect();
    let _ = plane;
    Ok((
        InitialState {
            projected_norm,
            index_tail,
        },
        norm.index_norm_range,
    ))
}

fn run_trajectory(
    req: &ProjectionRequest,
    state0: &InitialState,
    norm_range: (f32, f32),
    stream: u64,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<(Vec<f32>, usize)> {
    let ds = req.history;
    let cfg = &req.gen.cfg;
    let (u, plane) = (cfg.lag_u, ds.plane());
    let n_cov = ds.n_covariates();
    let t_max = ds.n_months; // months < t_max are observed

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    rng.set_stream(stream);

    // rolling lag state: most recent first, normalized
    let mut lags: Vec<Vec<f32>> = state0.index_tail.clone();
    let mut out = Vec::with_capacity(req.horizon * plane);
    let mut clamped = 0usize;

    for k in 1..=req.horizon {
        // absolute month index of the step target: t = t_max - 1 + k
        let target = t_max - 1 + k;
        let mut channels = Vec::with_capacity(((u + 1) * n_cov + u) * plane);
        for (ci, cov) in ds.covariates.iter().enumerate() {
            for lag in 0..=u {
                let t = target - lag;
                if t < t_max {
                    channels.extend_from_slice(cov.raster(t));
                } else {
                    let fut = t - t_max; // 0-based index into projections
                    channels.extend_from_slice(
                        &state0.projected_norm[ci][fut * plane..(fut + 1) * plane],
                    );
                }
            }
        }
        for lag in &lags {
            channels.extend_from_slice(lag);
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(StepTrace {
                step: k,
                index_lags: lags.clone(),
            });
        }

        let month = ds.start.plus(target).month;
        let ctx = ContextBatch::from_raw(
            GridTensor::from_vec(vec![1, (u + 1) * n_cov + u, ds.grid_h, ds.grid_w], channels),
            vec![month],
        )?;
        let mut fwd = Forward::eval(&mut rng);
        let y = generator_forward(req.gen, &ctx, &mut fwd)?;

        let (lo, hi) = norm_range;
        let mut normalized = Vec::with_capacity(plane);
        for &v in y.data() {
            let c = v.clamp(lo, hi);
            if c != v {
                clamped += 1;
            }
            normalized.push(c);
        }
        out.extend(normalized.iter().map(|&v| ds.denormalize_index(v)));

        lags.rotate_right(1);
        if !lags.is_empty() {
            lags[0] = normalized;
        }
    }
    Ok((out, clamped))
}
