//! Driest-month aggregation, return-period abnormality, and the commune
//! eligibility cascade.

use swigan_data::stats;

use crate::communes::CommuneTable;
use crate::error::{Result, RiskError};

pub const MIN_REFERENCE_YEARS: usize = 10;

/// Per-pixel minimum over the twelve monthly rasters of one year.
pub fn yearly_swi(monthly: &[&[f32]]) -> Result<Vec<f32>> {
    if monthly.len() != 12 {
        return Err(RiskError::Invalid(format!(
            "a year has 12 monthly rasters, got {}",
            monthly.len()
        )));
    }
    let plane = monthly[0].len();
    let mut out = vec![f32::INFINITY; plane];
    for m in monthly {
        if m.len() != plane {
            return Err(RiskError::Invalid("ragged monthly rasters".into()));
        }
        for (o, &v) in out.iter_mut().zip(*m) {
            if v < *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Per-pixel historical series of yearly (driest-month) values, pixel-major:
/// `series[p]` collects that pixel's yearly minima in chronological order.
#[derive(Clone, Debug)]
pub struct YearlyReference {
    pub plane: usize,
    pub series: Vec<Vec<f64>>,
}

impl YearlyReference {
    pub fn new(plane: usize) -> Self {
        Self {
            plane,
            series: vec![Vec::new(); plane],
        }
    }

    pub fn from_yearly_rasters(rasters: &[Vec<f32>]) -> Self {
        let plane = rasters.first().map_or(0, |r| r.len());
        let mut out = Self::new(plane);
        for r in rasters {
            out.push_year(r);
        }
        out
    }

    pub fn push_year(&mut self, yearly: &[f32]) {
        assert_eq!(yearly.len(), self.plane);
        for (s, &v) in self.series.iter_mut().zip(yearly) {
            s.push(v as f64);
        }
    }

    pub fn n_years(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    /// Build a reference from a monthly index stack, using only complete
    /// calendar years.
    pub fn from_monthly_stack(stack: &swigan_data::GridStack) -> Result<Self> {
        let plane = stack.grid_h * stack.grid_w;
        let mut out = Self::new(plane);
        let mut t = 0usize;
        while t < stack.n_months() {
            let m = stack.month(t);
            if m.month == 1 && t + 12 <= stack.n_months() {
                let months: Vec<&[f32]> = (0..12).map(|i| stack.raster(t + i)).collect();
                out.push_year(&yearly_swi(&months)?);
                t += 12;
            } else {
                t += 1;
            }
        }
        if out.n_years() == 0 {
            return Err(RiskError::Invalid(
                "index stack holds no complete calendar year".into(),
            ));
        }
        Ok(out)
    }
}

/// A pixel is abnormal when its yearly SWI falls at or below the empirical
/// quantile at level 1/return_period of its reference series (the dry tail).
pub fn abnormal_pixels(
    yearly: &[f32],
    reference: &YearlyReference,
    return_period_years: f64,
) -> Result<Vec<bool>> {
    if yearly.len() != reference.plane {
        return Err(RiskError::Invalid(
            "yearly raster does not match reference grid".into(),
        ));
    }
    if return_period_years <= 1.0 {
        return Err(RiskError::Invalid(format!(
            "return period {return_period_years} must exceed 1 year"
        )));
    }
    let n = reference.n_years();
    if n < MIN_REFERENCE_YEARS {
        return Err(RiskError::ReferenceTooShort {
            len: n,
            min: MIN_REFERENCE_YEARS,
        });
    }
    let level = 1.0 / return_period_years;
    let abnormal = yearly
        .iter()
        .zip(&reference.series)
        .map(|(&v, series)| {
            let q = stats::quantile_of(series, level);
            (v as f64) <= q
        })
        .collect();
    Ok(abnormal)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Eligibility {
    Eligible,
    PotentiallyEligible,
    NotEligible,
}

/// Eligible when at least `pixel_fraction` of the commune's pixels are
/// abnormal; potentially eligible when not eligible but at least
/// `neighbor_fraction` of its neighbors are eligible.
pub fn commune_eligibility(
    abnormal: &[bool],
    communes: &CommuneTable,
    pixel_fraction: f64,
    neighbor_fraction: f64,
) -> Result<Vec<(String, Eligibility)>> {
    if abnormal.len() != communes.grid_h * communes.grid_w {
        return Err(RiskError::Invalid(
            "abnormal raster does not match the commune grid".into(),
        ));
    }
    let eligible: Vec<bool> = communes
        .communes
        .iter()
        .map(|c| {
            let hits = c
                .pixels
                .iter()
                .filter(|(r, col)| abnormal[r * communes.grid_w + col])
                .count();
            hits as f64 >= pixel_fraction * c.pixels.len() as f64
        })
        .collect();

    let status = communes
        .communes
        .iter()
        .zip(&eligible)
        .map(|(c, &own)| {
            let s = if own {
                Eligibility::Eligible
            } else if !c.neighbors.is_empty() {
                let elig_neighbors = c
                    .neighbors
                    .iter()
                    .filter(|n| {
                        let idx = communes.communes.iter().position(|x| &x.id == *n).unwrap();
                        eligible[idx]
                    })
                    .count();
                if elig_neighbors as f64 >= neighbor_fraction * c.neighbors.len() as f64 {
                    Eligibility::PotentiallyEligible
                } else {
                    Eligibility::NotEligible
                }
            } else {
                Eligibility::NotEligible
            };
            (c.id.clone(), s)
        })
        .collect();
    Ok(status)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::communes::rectangular_communes;

    #[test]
    fn yearly_swi_trivials() {
        let months: Vec<Vec<f32>> = (0..12).map(|_| vec![0.9f32; 4]).collect();
        let refs: Vec<&[f32]> = months.iter().map(|m| m.as_slice()).collect();
        assert_eq!(yearly_swi(&refs).unwrap(), vec![0.9; 4]);

        let mut months = months;
        months[6] = vec![0.1; 4];
        let refs: Vec<&[f32]> = months.iter().map(|m| m.as_slice()).collect();
        assert_eq!(yearly_swi(&refs).unwrap(), vec![0.1; 4]);

        let refs_short: Vec<&[f32]> = months[..11].iter().map(|m| m.as_slice()).collect();
        assert!(yearly_swi(&refs_short).is_err());
    }

    #[test]
    fn yearly_swi_matches_brute_force_min() {
        let months: Vec<Vec<f32>> = (0..12)
            .map(|m| {
                (0..6)
                    .map(|p| ((m * 7 + p * 13) % 23) as f32 * 0.04)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f32]> = months.iter().map(|m| m.as_slice()).collect();
        let got = yearly_swi(&refs).unwrap();
        for p in 0..6 {
            let brute = months.iter().map(|m| m[p]).fold(f32::INFINITY, f32::min);
            assert_eq!(got[p], brute);
        }
    }

    #[test]
    fn beyond_record_drought_is_abnormal() {
        let mut reference = YearlyReference::new(1);
        for y in 0..12 {
            reference.push_year(&[0.3 + 0.01 * y as f32]);
        }
        // return period = length + 1 and the yearly value below the minimum
        let abn = abnormal_pixels(&[0.1], &reference, 13.0).unwrap();
        assert!(abn[0]);
    }

    #[test]
    fn median_year_is_not_abnormal_at_25_years() {
        let mut reference = YearlyReference::new(1);
        for y in 0..20 {
            reference.push_year(&[0.2 + 0.01 * y as f32]);
        }
        let median = 0.2 + 0.01 * 9.5;
        let abn = abnormal_pixels(&[median as f32], &reference, 25.0).unwrap();
        assert!(!abn[0]);
    }

    #[test]
    fn short_reference_is_rejected() {
        let mut reference = YearlyReference::new(1);
        for _ in 0..9 {
            reference.push_year(&[0.5]);
        }
        assert!(matches!(
            abnormal_pixels(&[0.1], &reference, 25.0),
            Err(RiskError::ReferenceTooShort { len: 9, .. })
        ));
    }

    #[test]
    fn eligibility_trivials() {
        let table = rectangular_communes(4, 4, 2, 2, 1);
        // all pixels abnormal -> everyone eligible
        let all = vec![true; 16];
        let status = commune_eligibility(&all, &table, 0.5, 0.5).unwrap();
        assert!(status.iter().all(|(_, s)| *s == Eligibility::Eligible));

        // nothing abnormal -> everyone not eligible
        let none = vec![false; 16];
        let status = commune_eligibility(&none, &table, 0.5, 0.5).unwrap();
        assert!(status.iter().all(|(_, s)| *s == Eligibility::NotEligible));
    }

    #[test]
    fn surrounded_commune_is_potentially_eligible() {
        let table = rectangular_communes(4, 4, 2, 2, 2);
        // make every pixel abnormal except commune c00_00's block
        let mut abn = vec![true; 16];
        let c0 = &table.communes[0];
        for &(r, c) in &c0.pixels {
            abn[r * 4 + c] = false;
        }
        let status = commune_eligibility(&abn, &table, 0.5, 0.5).unwrap();
        let mine = status.iter().find(|(id, _)| id == &c0.id).unwrap();
        assert_eq!(mine.1, Eligibility::PotentiallyEligible);
    }

    #[test]
    fn isolated_commune_without_abnormal_pixels_is_not_eligible() {
        let c = crate::communes::Commune {
            id: "solo".into(),
            pixels: vec![(0, 0), (0, 1)],
            buildings: 10,
            neighbors: vec![],
        };
        let table = CommuneTable::new(vec![c], 1, 2).unwrap();
        let status = commune_eligibility(&[false, false], &table, 0.5, 0.5).unwrap();
        assert_eq!(status[0].1, Eligibility::NotEligible);
    }

    /// Lowering every pixel's SWI never shrinks the eligible set.
    #[test]
    fn eligibility_is_monotone_in_dryness() {
        let table = rectangular_communes(6, 6, 3, 3, 3);
        let mut reference = YearlyReference::new(36);
        for y in 0..15 {
            let raster: Vec<f32> = (0..36)
                .map(|p| 0.3 + 0.02 * ((p * 7 + y * 13) % 10) as f32)
                .collect();
            reference.push_year(&raster);
        }
        for seed in 0..20u64 {
            let yearly: Vec<f32> = (0..36)
                .map(|p| 0.25 + 0.015 * (((p as u64 + 3) * (seed + 11)) % 17) as f32)
                .collect();
            let drier: Vec<f32> = yearly.iter().map(|v| v - 0.05).collect();
            let abn_a = abnormal_pixels(&yearly, &reference, 25.0).unwrap();
            let abn_b = abnormal_pixels(&drier, &reference, 25.0).unwrap();
            let count = |abn: &[bool]| {
                commune_eligibility(abn, &table, 0.5, 0.5)
                    .unwrap()
                    .iter()
                    .filter(|(_, s)| *s == Eligibility::Eligible)
                    .count()
            };
            assert!(
                count(&abn_b) >= count(&abn_a),
                "drying reduced eligibility (seed {seed})"
            );
        }
    }
}
