//! Trajectory-level loss distributions: per simulated year, run eligibility
//! on that trajectory's SWI, total the exposed buildings of eligible
//! communes, convert to cost. Each simulated year's driest-month raster
//! joins the reference series for the following years, so abnormality is
//! always judged against the trajectory's own growing history.

use swigan_data::stats;
use swigan_scenario::TrajectoryEnsemble;

use crate::communes::CommuneTable;
use crate::cost::CostModel;
use crate::eligibility::{
    abnormal_pixels, commune_eligibility, yearly_swi, Eligibility, YearlyReference,
};
use crate::error::{Result, RiskError};

#[derive(Clone, Copy, Debug)]
pub struct RiskConfig {
    pub return_period_years: f64,
    /// Fraction of a commune's pixels that must be abnormal for eligibility.
    pub pixel_fraction: f64,
    /// Fraction of eligible neighbors that makes a commune potentially
    /// eligible.
    pub neighbor_fraction: f64,
    /// Apply the cost formula to the regional building total (the default)
    /// or per commune, summing the per-commune costs.
    pub per_commune_costs: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            return_period_years: 25.0,
            pixel_fraction: 0.5,
            neighbor_fraction: 0.5,
            per_commune_costs: false,
        }
    }
}

/// One simulated year of one trajectory.
#[derive(Clone, Debug)]
pub struct YearOutcome {
    pub trajectory: usize,
    pub year: i32,
    pub eligible_communes: usize,
    pub potentially_eligible: usize,
    pub exposed_buildings: u64,
    pub cost_eur: f64,
}

/// Per-year samples of aggregate insured losses across trajectories.
#[derive(Clone, Debug)]
pub struct CostDistribution {
    pub years: Vec<i32>,
    /// costs[y][m] is trajectory m's cost in calendar year years[y].
    pub costs: Vec<Vec<f64>>,
    pub outcomes: Vec<YearOutcome>,
}

impl CostDistribution {
    /// Quantile of one year's cost sample.
    pub fn year_quantile(&self, year_idx: usize, level: f64) -> f64 {
        stats::quantile_of(&self.costs[year_idx], level)
    }

    /// Per-trajectory maximum annual cost over the whole horizon: the sample
    /// the headline Value-at-Risk is computed on.
    pub fn trajectory_max(&self) -> Vec<f64> {
        let m = self.costs.first().map_or(0, Vec::len);
        (0..m)
            .map(|traj| {
                self.costs
                    .iter()
                    .map(|year| year[traj])
                    .fold(0.0f64, f64::max)
            })
            .collect()
    }
}

/// Empirical quantile (linear interpolation of order statistics) of a loss
/// sample at the given level.
pub fn value_at_risk(samples: &[f64], level: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(RiskError::Invalid(
            "value_at_risk of an empty sample".into(),
        ));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(RiskError::Invalid(format!(
            "confidence level {level} outside [0,1]"
        )));
    }
    Ok(stats::quantile_of(samples, level))
}

/// Full pipeline over an ensemble. `historical` is the per-pixel reference
/// of observed yearly SWI minima; each trajectory extends a private copy of
/// it as its simulated years unfold.
pub fn loss_distribution(
    ensemble: &TrajectoryEnsemble,
    communes: &CommuneTable,
    model: &CostModel,
    cfg: &RiskConfig,
    historical: &YearlyReference,
) -> Result<CostDistribution> {
    let plane = ensemble.plane();
    if communes.grid_h != ensemble.grid_h || communes.grid_w != ensemble.grid_w {
        return Err(RiskError::Invalid(
            "commune grid does not match the ensemble grid".into(),
        ));
    }
    if historical.plane != plane {
        return Err(RiskError::Invalid(
            "reference grid does not match the ensemble grid".into(),
        ));
    }

    // complete calendar years within the horizon
    let mut year_spans: Vec<(i32, usize)> = Vec::new(); // (year, step of January)
    let mut step = 0usize;
    while step < ensemble.horizon {
        let m = ensemble.start.plus(step);
        if m.month == 1 && step + 12 <= ensemble.horizon {
            year_spans.push((m.year, step));
            step += 12;
        } else {
            step += 1;
        }
    }
    if year_spans.is_empty() {
        return Err(RiskError::Invalid(
            "ensemble horizon contains no complete calendar year".into(),
        ));
    }

    let years: Vec<i32> = year_spans.iter().map(|(y, _)| *y).collect();
    let mut costs = vec![vec![0.0f64; ensemble.n_trajectories()]; years.len()];
    let mut outcomes = Vec::with_capacity(years.len() * ensemble.n_trajectories());

    #[allow(clippy::needless_range_loop)]
    for traj in 0..ensemble.n_trajectories() {
        let mut reference = historical.clone();
        for (yi, &(year, start_step)) in year_spans.iter().enumerate() {
            let months: Vec<&[f32]> = (0..12)
                .map(|m| ensemble.raster(traj, start_step + m))
                .collect();
            let yearly = yearly_swi(&months)?;
            let abnormal = abnormal_pixels(&yearly, &reference, cfg.return_period_years)?;
            let status = commune_eligibility(
                &abnormal,
                communes,
                cfg.pixel_fraction,
                cfg.neighbor_fraction,
            )?;

            let eligible_ids: Vec<usize> = status
                .iter()
                .enumerate()
                .filter(|(_, (_, s))| *s == Eligibility::Eligible)
                .map(|(i, _)| i)
                .collect();
            let potentially = status
                .iter()
                .filter(|(_, s)| *s == Eligibility::PotentiallyEligible)
                .count();
            let exposed: u64 = eligible_ids
                .iter()
                .map(|&i| communes.communes[i].buildings)
                .sum();

            let cost = if exposed == 0 {
                0.0
            } else if cfg.per_commune_costs {
                let mut total = 0.0;
                for &i in &eligible_ids {
                    total += model.cost(communes.communes[i].buildings as f64)?;
                }
                total
            } else {
                model.cost(exposed as f64)?
            };

            costs[yi][traj] = cost;
            outcomes.push(YearOutcome {
                trajectory: traj,
                year,
                eligible_communes: eligible_ids.len(),
                potentially_eligible: potentially,
                exposed_buildings: exposed,
                cost_eur: cost,
            });
            reference.push_year(&yearly);
        }
    }
    Ok(CostDistribution {
        years,
        costs,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_level_one_is_the_maximum() {
        let s = [3.0, 1.0, 4.0, 1.5];
        assert_eq!(value_at_risk(&s, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn var_median_of_three() {
        assert_eq!(value_at_risk(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn var_matches_brute_force_sort_quantile() {
        let samples: Vec<f64> = (0..57).map(|i| ((i * 37) % 101) as f64 * 0.77).collect();
        for &level in &[0.1, 0.5, 0.9, 0.995] {
            let got = value_at_risk(&samples, level).unwrap();
            let mut sorted = samples.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let brute = swigan_data::stats::quantile(&sorted, level);
            assert_eq!(got, brute);
        }
    }
}
