//! Daily-to-monthly aggregation.
//!
//! Every variable is aggregated by per-pixel monthly maximum; precipitation
//! additionally gets the monthly total and monthly average.

use crate::error::{DataError, Result};
use crate::format::GridStack;
use crate::months::MonthStamp;

/// Daily rasters for one variable, contiguous from the first day of `start`.
#[derive(Clone, Debug)]
pub struct DailyStack {
    pub name: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub start: MonthStamp,
    /// day-major, row-major; day 0 is the 1st of `start`.
    pub values: Vec<f32>,
}

impl DailyStack {
    pub fn n_days(&self) -> usize {
        self.values.len() / (self.grid_h * self.grid_w)
    }
}

pub const PRECIPITATION_VAR: &str = "prtot";

/// The daily source variables; each yields a monthly-max covariate, and
/// precipitation additionally yields monthly total and average.
pub const DAILY_VARIABLES: [&str; 8] = [
    "huss",
    "prtot",
    "rlds",
    "rsds",
    "tas",
    "tasmax",
    "tasmin",
    "evspsblpot",
];

/// Aggregate one variable's daily stack into monthly covariates. Fails if the
/// final month is only partially covered, listing the missing days.
pub fn aggregate_daily_to_monthly(daily: &DailyStack) -> Result<Vec<GridStack>> {
    let plane = daily.grid_h * daily.grid_w;
    let n_days = daily.n_days();
    if n_days == 0 {
        return Err(DataError::Dataset(format!(
            "daily stack {} is empty",
            daily.name
        )));
    }

    // Slice days into calendar months, rejecting a trailing partial month.
    let mut month_spans: Vec<(MonthStamp, usize, usize)> = Vec::new();
    let mut m = daily.start;
    let mut day0 = 0usize;
    while day0 < n_days {
        let len = m.days_in_month() as usize;
        if day0 + len > n_days {
            let missing: Vec<u32> = ((n_days - day0) as u32 + 1..=len as u32).collect();
            return Err(DataError::PartialMonth {
                year: m.year,
                month: m.month,
                missing,
            });
        }
        month_spans.push((m, day0, len));
        day0 += len;
        m = m.next();
    }

    let n_months = month_spans.len();
    let mut max_vals = vec![f32::NEG_INFINITY; n_months * plane];
    let mut sum_vals = vec![0.0f32; n_months * plane];
    for (mi, &(_, d0, len)) in month_spans.iter().enumerate() {
        for d in d0..d0 + len {
            let day = &daily.values[d * plane..(d + 1) * plane];
            let mx = &mut max_vals[mi * plane..(mi + 1) * plane];
            let sm = &mut sum_vals[mi * plane..(mi + 1) * plane];
            for p in 0..plane {
                if day[p] > mx[p] {
                    mx[p] = day[p];
                }
                sm[p] += day[p];
            }
        }
    }

    let mk = |suffix: &str, values: Vec<f32>| {
        GridStack::new(
            format!("{}_{suffix}", daily.name),
            daily.grid_h,
            daily.grid_w,
            daily.start,
            values,
        )
    };
    let mut out = vec![mk("max", max_vals)];
    if daily.name == PRECIPITATION_VAR {
        let mut avg_vals = sum_vals.clone();
        for (mi, &(_, _, len)) in month_spans.iter().enumerate() {
            for v in &mut avg_vals[mi * plane..(mi + 1) * plane] {
                *v /= len as f32;
            }
        }
        out.push(mk("avg", avg_vals));
        out.push(mk("sum", sum_vals));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn daily(name: &str, months: &[(i32, u32)], f: impl Fn(usize, usize) -> f32) -> DailyStack {
        let start = MonthStamp::new(months[0].0, months[0].1);
        let mut values = Vec::new();
        let mut day = 0;
        for &(y, m) in months {
            for _ in 0..MonthStamp::new(y, m).days_in_month() {
                for p in 0..4 {
                    values.push(f(day, p));
                }
                day += 1;
            }
        }
        DailyStack {
            name: name.into(),
            grid_h: 2,
            grid_w: 2,
            start,
            values,
        }
    }

    #[test]
    fn constant_field_aggregates_trivially() {
        // 30-day month: max v, avg v, total 30 v
        let d = daily("prtot", &[(2001, 4)], |_, _| 2.5);
        let out = aggregate_daily_to_monthly(&d).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].name, "prtot_max");
        assert_eq!(out[1].name, "prtot_avg");
        assert_eq!(out[2].name, "prtot_sum");
        assert_eq!(out[0].values[0], 2.5);
        assert_eq!(out[1].values[0], 2.5);
        assert_eq!(out[2].values[0], 75.0);
    }

    #[test]
    fn single_spike_day() {
        // one day at 9 among zeros in a 30-day month
        let d = daily(
            "prtot",
            &[(2001, 6)],
            |day, _| if day == 12 { 9.0 } else { 0.0 },
        );
        let out = aggregate_daily_to_monthly(&d).unwrap();
        assert_eq!(out[0].values[0], 9.0); // max
        assert!((out[1].values[0] - 0.3).abs() < 1e-6); // avg = 9/30
        assert_eq!(out[2].values[0], 9.0); // total
    }

    #[test]
    fn non_precipitation_yields_only_max() {
        let d = daily("tas", &[(2001, 1), (2001, 2)], |day, p| {
            (day * 4 + p) as f32
        });
        let out = aggregate_daily_to_monthly(&d).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "tas_max");
        assert_eq!(out[0].n_months(), 2);
        // January's max at pixel 0 is day 30 -> 120
        assert_eq!(out[0].values[0], 120.0);
    }

    #[test]
    fn partial_month_is_rejected_with_missing_days() {
        let mut d = daily("tas", &[(2001, 1)], |_, _| 1.0);
        d.values.truncate(d.values.len() - 4 * 2); // drop the last two days
        let err = aggregate_daily_to_monthly(&d).unwrap_err();
        match err {
            DataError::PartialMonth {
                year: 2001,
                month: 1,
                missing,
            } => {
                assert_eq!(missing, vec![30, 31]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pixel_permutation_commutes_with_aggregation() {
        let d = daily("tas", &[(2002, 3)], |day, p| {
            ((day * 7 + p * 13) % 17) as f32
        });
        let perm = [2usize, 0, 3, 1];
        let mut d_perm = d.clone();
        let plane = 4;
        for day in 0..d.n_days() {
            #[allow(clippy::needless_range_loop)]
            for p in 0..plane {
                d_perm.values[day * plane + p] = d.values[day * plane + perm[p]];
            }
        }
        let a = aggregate_daily_to_monthly(&d).unwrap();
        let b = aggregate_daily_to_monthly(&d_perm).unwrap();
        for (p, &src) in perm.iter().enumerate() {
            assert_eq!(b[0].values[p], a[0].values[src]);
        }
    }
}
