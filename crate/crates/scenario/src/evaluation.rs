//! Per-pixel trajectory-quality metrics, averaged over the ensemble.

use swigan_data::stats;

use crate::error::{Result, ScenarioError};
use crate::projection::TrajectoryEnsemble;

pub const METRIC_NAMES: [&str; 6] = ["mse", "rmse", "mae", "smape", "r2", "rho"];

#[derive(Clone, Debug)]
pub struct MetricRaster {
    pub metric: &'static str,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Per-pixel value, averaged over trajectories; NaN marks pixels where
    /// the metric is undefined (zero-variance observations).
    pub values: Vec<f64>,
}

/// Per-trajectory, per-pixel metrics over the common time axis, then the
/// mean across trajectories.
///
/// `observed` is a month-major raster stack aligned with the ensemble's
/// months (same length as the horizon).
pub fn compute_metrics(
    observed: &[f32],
    ensemble: &TrajectoryEnsemble,
) -> Result<Vec<MetricRaster>> {
    let plane = ensemble.plane();
    let steps = ensemble.horizon;
    if observed.len() != steps * plane {
        return Err(ScenarioError::Evaluation(format!(
            "observed stack has {} values, ensemble covers {}",
            observed.len(),
            steps * plane
        )));
    }
    let mut rasters: Vec<MetricRaster> = METRIC_NAMES
        .iter()
        .map(|m| MetricRaster {
            metric: m,
            grid_h: ensemble.grid_h,
            grid_w: ensemble.grid_w,
            values: vec![0.0; plane],
        })
        .collect();

    let mut obs_series = vec![0.0f64; steps];
    let mut gen_series = vec![0.0f64; steps];
    for p in 0..plane {
        for (t, o) in obs_series.iter_mut().enumerate() {
            *o = observed[t * plane + p] as f64;
        }
        let mut sums = [0.0f64; 6];
        let mut counts = [0usize; 6];
        for traj in &ensemble.trajectories {
            for (t, g) in gen_series.iter_mut().enumerate() {
                *g = traj[t * plane + p] as f64;
            }
            let m = series_metrics(&obs_series, &gen_series);
            for (i, v) in m.iter().enumerate() {
                if v.is_finite() {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
        }
        for i in 0..6 {
            rasters[i].values[p] = if counts[i] == 0 {
                f64::NAN
            } else {
                sums[i] / counts[i] as f64
            };
        }
    }
    Ok(rasters)
}

/// The six metrics for one (observed, generated) series pair:
/// MSE, RMSE, MAE, SMAPE (x100%), R^2, Pearson rho.
///
/// Conventions: a perfect prediction has rho = 1 and R^2 = 1; a
/// zero-variance observed series leaves R^2 and rho undefined (NaN);
/// SMAPE terms with |y| + |y_hat| below 1e-12 contribute zero.
pub fn series_metrics(y: &[f64], y_hat: &[f64]) -> [f64; 6] {
    let n = y.len() as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    let mut smape = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let d = a - b;
        mse += d * d;
        mae += d.abs();
        let denom = (a.abs() + b.abs()) / 2.0;
        if denom >= 1e-12 {
            smape += d.abs() / denom;
        }
    }
    mse /= n;
    mae /= n;
    smape = smape / n * 100.0;

    let y_mean = stats::mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();

    let (r2, rho) = if ss_res == 0.0 {
        (1.0, 1.0)
    } else if ss_tot == 0.0 {
        (f64::NAN, f64::NAN)
    } else {
        (1.0 - ss_res / ss_tot, stats::pearson(y, y_hat))
    };
    [mse, mse.sqrt(), mae, smape, r2, rho]
}

#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub q10: f64,
    pub q20: f64,
    pub q50: f64,
    pub q80: f64,
    pub q90: f64,
    pub max: f64,
}

/// Pixel quantiles per metric (NaN pixels excluded).
pub fn summarize(rasters: &[MetricRaster]) -> Vec<SummaryRow> {
    rasters
        .iter()
        .map(|r| {
            let mut finite: Vec<f64> = r.values.iter().copied().filter(|v| v.is_finite()).collect();
            finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                if finite.is_empty() {
                    f64::NAN
                } else {
                    stats::quantile(&finite, p)
                }
            };
            SummaryRow {
                metric: r.metric,
                q10: q(0.1),
                q20: q(0.2),
                q50: q(0.5),
                q80: q(0.8),
                q90: q(0.9),
                max: finite.last().copied().unwrap_or(f64::NAN),
            }
        })
        .collect()
}
