//! `ClimateDataset`: aligned covariate and index stacks with chronological
//! splits and training-set normalization statistics.

use std::fs;
use std::path::Path;

use crate::error::{DataError, Result};
use crate::format::GridStack;
use crate::months::MonthStamp;

pub const INDEX_NAME: &str = "swi";
const STD_FLOOR: f32 = 1e-8;

/// Per-variable normalization statistics, computed on the training range only.
#[derive(Clone, Debug)]
pub struct NormStats {
    /// (mean, std) per covariate, in covariate order.
    pub covariates: Vec<(f32, f32)>,
    pub index: (f32, f32),
    /// Observed range of the normalized index over the training split;
    /// projections clamp to this range.
    pub index_norm_range: (f32, f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Splits {
    /// Months [0, train_end) are training data.
    pub train_end: usize,
    /// Months [train_end, val_end) are validation; the rest is test.
    pub val_end: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct ClimateDataset {
    pub grid_h: usize,
    pub grid_w: usize,
    pub start: MonthStamp,
    pub n_months: usize,
    /// Covariate stacks in a fixed order; all share the grid and time axis.
    pub covariates: Vec<GridStack>,
    pub index: GridStack,
    pub splits: Splits,
    /// Present once `normalize` has run; stacks then hold normalized values.
    pub norm: Option<NormStats>,
}

impl ClimateDataset {
    pub fn new(covariates: Vec<GridStack>, index: GridStack, splits: Splits) -> Result<Self> {
        let (grid_h, grid_w, start, n_months) =
            (index.grid_h, index.grid_w, index.start, index.n_months());
        for c in &covariates {
            if c.grid_h != grid_h || c.grid_w != grid_w {
                return Err(DataError::Dataset(format!(
                    "covariate {} grid {}x{} does not match index grid {}x{}",
                    c.name, c.grid_h, c.grid_w, grid_h, grid_w
                )));
            }
            if c.start != start || c.n_months() != n_months {
                return Err(DataError::Dataset(format!(
                    "covariate {} time axis does not match the index",
                    c.name
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Dataset(format!(
                    "covariate {} has non-finite values",
                    c.name
                )));
            }
        }
        if index.values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Dataset("index has non-finite values".into()));
        }
        if splits.train_end == 0 || splits.train_end > splits.val_end || splits.val_end > n_months {
            return Err(DataError::Dataset(format!(
                "bad split boundaries {:?} for {} months",
                splits, n_months
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            start,
            n_months,
            covariates,
            index,
            splits,
            norm: None,
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn plane(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn month(&self, t: usize) -> MonthStamp {
        self.start.plus(t)
    }

    pub fn split_of(&self, t: usize) -> Split {
        if t < self.splits.train_end {
            Split::Train
        } else if t < self.splits.val_end {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.splits.train_end,
            Split::Val => self.splits.train_end..self.splits.val_end,
            Split::Test => self.splits.val_end..self.n_months,
        }
    }

    /// Transform every variable to (x - mean_train) / std_train, with the
    /// std floored at 1e-8. Statistics come exclusively from the training
    /// months. Idempotent in the sense that it refuses to run twice.
    pub fn normalize(mut self) -> Result<Self> {
        if self.norm.is_some() {
            return Err(DataError::Dataset("dataset is already normalized".into()));
        }
        let train_len = self.splits.train_end * self.plane();
        let mut cov_stats = Vec::with_capacity(self.covariates.len());
        for c in &mut self.covariates {
            let (m, s) = mean_std(&c.values[..train_len]);
            for v in &mut c.values {
                *v = (*v - m) / s;
            }
            cov_stats.push((m, s));
        }
        let (im, is) = mean_std(&self.index.values[..train_len]);
        for v in &mut self.index.values {
            *v = (*v - im) / is;
        }
        let train_norm = &self.index.values[..train_len];
        let lo = train_norm.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = train_norm.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        self.norm = Some(NormStats {
            covariates: cov_stats,
            index: (im, is),
            index_norm_range: (lo, hi),
        });
        Ok(self)
    }

    pub fn denormalize_index(&self, v: f32) -> f32 {
        match &self.norm {
            Some(n) => v * n.index.1 + n.index.0,
            None => v,
        }
    }

    pub fn normalize_index_value(&self, v: f32) -> f32 {
        match &self.norm {
            Some(n) => (v - n.index.0) / n.index.1,
            None => v,
        }
    }

    /// A raw copy covering only the first `months` months (splits must fit).
    /// Refuses normalized inputs: truncate first, then normalize, so the
    /// training statistics stay identical to the full dataset's.
    pub fn truncated(&self, months: usize) -> Result<Self> {
        if self.norm.is_some() {
            return Err(DataError::Dataset(
                "truncate the raw dataset, then normalize".into(),
            ));
        }
        if months < self.splits.val_end || months > self.n_months {
            return Err(DataError::Dataset(format!(
                "cannot truncate {} months to {months} with val_end {}",
                self.n_months, self.splits.val_end
            )));
        }
        let plane = self.plane();
        let cut = |s: &GridStack| {
            GridStack::new(
                s.name.clone(),
                s.grid_h,
                s.grid_w,
                s.start,
                s.values[..months * plane].to_vec(),
            )
        };
        Self::new(
            self.covariates.iter().map(cut).collect(),
            cut(&self.index),
            self.splits,
        )
    }

    /// Raw covariate slices for months [from, to), one stack per covariate,
    /// stamped to start at month `from`.
    pub fn covariate_slices(&self, from: usize, to: usize) -> Result<Vec<GridStack>> {
        if self.norm.is_some() {
            return Err(DataError::Dataset("slice the raw dataset".into()));
        }
        if from >= to || to > self.n_months {
            return Err(DataError::Dataset(format!("bad slice {from}..{to}")));
        }
        let plane = self.plane();
        Ok(self
            .covariates
            .iter()
            .map(|s| {
                GridStack::new(
                    s.name.clone(),
                    s.grid_h,
                    s.grid_w,
                    self.start.plus(from),
                    s.values[from * plane..to * plane].to_vec(),
                )
            })
            .collect())
    }

    /// Earliest month index that can serve as a context target for lag `u`.
    pub fn first_valid_target(&self, u: usize) -> usize {
        u
    }

    /// Context targets of a split, i.e. months t with a full lag window.
    pub fn targets_in(&self, split: Split, u: usize) -> Vec<usize> {
        self.split_range(split)
            .filter(|&t| t >= self.first_valid_target(u))
            .collect()
    }

    /// The conditioning stack for target month t: (u+1) months of every
    /// covariate (most recent first) followed by u lagged index maps
    /// (most recent first). No noise or embedding channels; the generator
    /// appends those. Channel count = (u+1) * n_covariates + u.
    pub fn context_channels(&self, t: usize, u: usize) -> Vec<f32> {
        assert!(t >= u, "target {t} has no full lag-{u} window");
        let plane = self.plane();
        let mut out = Vec::with_capacity(((u + 1) * self.covariates.len() + u) * plane);
        for c in &self.covariates {
            for lag in 0..=u {
                out.extend_from_slice(c.raster(t - lag));
            }
        }
        for lag in 1..=u {
            out.extend_from_slice(self.index.raster(t - lag));
        }
        out
    }

    pub fn context_channel_count(&self, u: usize) -> usize {
        (u + 1) * self.covariates.len() + u
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut meta = String::new();
        meta.push_str(&format!("grid_h={}\n", self.grid_h));
        meta.push_str(&format!("grid_w={}\n", self.grid_w));
        meta.push_str(&format!("n_months={}\n", self.n_months));
        meta.push_str(&format!("start_year={}\n", self.start.year));
        meta.push_str(&format!("start_month={}\n", self.start.month));
        meta.push_str(&format!("train_end={}\n", self.splits.train_end));
        meta.push_str(&format!("val_end={}\n", self.splits.val_end));
        let names: Vec<&str> = self.covariates.iter().map(|c| c.name.as_str()).collect();
        meta.push_str(&format!("covariates={}\n", names.join(",")));
        meta.push_str(&format!("normalized={}\n", self.norm.is_some()));
        fs::write(dir.join("meta.txt"), meta)?;
        for c in &self.covariates {
            c.save(&dir.join(format!("{}.grd", c.name)))?;
        }
        self.index.save(&dir.join(format!("{INDEX_NAME}.grd")))?;
        Ok(())
    }

    /// Load a dataset directory. A normalized dataset is stored in raw form
    /// never: save() writes whatever the stacks currently hold, so `load`
    /// recomputes statistics only when the meta says the data is raw.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join("meta.txt"))
            .map_err(|e| DataError::Dataset(format!("cannot read meta.txt in {dir:?}: {e}")))?;
        let kv = parse_meta(&meta)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| DataError::Dataset(format!("meta.txt missing key {k}")))
        };
        let train_end: usize = parse_num(&get("train_end")?)?;
        let val_end: usize = parse_num(&get("val_end")?)?;
        let names: Vec<String> = get("covariates")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let normalized = get("normalized")? == "true";

        let covariates: Vec<GridStack> = names
            .iter()
            .map(|n| GridStack::load(&dir.join(format!("{n}.grd"))))
            .collect::<Result<_>>()?;
        let index = GridStack::load(&dir.join(format!("{INDEX_NAME}.grd")))?;
        let ds = Self::new(covariates, index, Splits { train_end, val_end })?;
        if normalized {
            // Stacks on disk are raw by construction (synth/convert write raw);
            // a normalized flag would require stored statistics, which the
            // format intentionally omits.
            return Err(DataError::Dataset(
                "dataset directories must hold raw values; normalize after loading".into(),
            ));
        }
        Ok(ds)
    }
}

fn mean_std(values: &[f32]) -> (f32, f32) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    (mean as f32, (var.sqrt() as f32).max(STD_FLOOR))
}

fn parse_meta(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Dataset(format!("bad meta line: {line}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| DataError::Dataset(format!("bad number: {s}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> ClimateDataset {
        let start = MonthStamp::new(2000, 1);
        let plane = 4;
        let n = 10;
        let cov = GridStack::new(
            "cov00",
            2,
            2,
            start,
            (0..n * plane).map(|v| v as f32).collect(),
        );
        let idx = GridStack::new(
            INDEX_NAME,
            2,
            2,
            start,
            (0..n * plane).map(|v| (v as f32 * 0.01).sin()).collect(),
        );
        ClimateDataset::new(
            vec![cov],
            idx,
            Splits {
                train_end: 6,
                val_end: 8,
            },
        )
        .unwrap()
    }

    #[test]
    fn normalize_zero_mean_unit_std_on_train() {
        let ds = tiny_dataset().normalize().unwrap();
        let train_len = ds.splits.train_end * ds.plane();
        let (m, s) = mean_std(&ds.covariates[0].values[..train_len]);
        assert!(m.abs() < 1e-5, "train mean {m}");
        assert!((s - 1.0).abs() < 1e-4, "train std {s}");
    }

    #[test]
    fn normalize_constant_variable_maps_to_zero() {
        let start = MonthStamp::new(2000, 1);
        let cov = GridStack::new("c", 2, 2, start, vec![7.5; 40]);
        let idx = GridStack::new(INDEX_NAME, 2, 2, start, (0..40).map(|v| v as f32).collect());
        let ds = ClimateDataset::new(
            vec![cov],
            idx,
            Splits {
                train_end: 6,
                val_end: 8,
            },
        )
        .unwrap()
        .normalize()
        .unwrap();
        assert!(ds.covariates[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denormalize_roundtrip() {
        let ds = tiny_dataset();
        let raw = ds.index.values.clone();
        let ds = ds.normalize().unwrap();
        for (t, &r) in raw.iter().enumerate() {
            let back = ds.denormalize_index(ds.index.values[t]);
            assert!((back - r).abs() < 1e-5, "roundtrip {r} -> {back}");
        }
    }

    #[test]
    fn context_ordering_and_count() {
        let ds = tiny_dataset();
        let u = 2;
        assert_eq!(ds.first_valid_target(u), u);
        let ch = ds.context_channels(5, u);
        assert_eq!(ch.len(), ds.context_channel_count(u) * ds.plane());
        // lag-0 covariate channel equals the month-5 raster
        assert_eq!(&ch[..4], ds.covariates[0].raster(5));
        // most-recent-first lagged index maps follow the covariates
        let idx_off = (u + 1) * 4;
        assert_eq!(&ch[idx_off..idx_off + 4], ds.index.raster(4));
        assert_eq!(&ch[idx_off + 4..idx_off + 8], ds.index.raster(3));
    }

    #[test]
    fn context_windows_never_read_future_months() {
        let ds = tiny_dataset();
        let u = 3;
        for split in [Split::Train, Split::Val, Split::Test] {
            for t in ds.targets_in(split, u) {
                // the window is t-u..=t by construction; verify bounds
                assert!(t >= u);
                assert!(t < ds.n_months);
            }
        }
        // first valid target index equals u
        assert_eq!(ds.targets_in(Split::Train, u)[0], u);
    }

    #[test]
    fn full_scale_context_count() {
        // 760 monthly rasters and a lag window of 8 leave 752 usable targets
        let start = MonthStamp::new(1960, 1);
        let n = 760;
        let cov = GridStack::new("c", 2, 2, start, vec![0.5; n * 4]);
        let idx = GridStack::new(
            INDEX_NAME,
            2,
            2,
            start,
            (0..n * 4).map(|v| (v % 7) as f32).collect(),
        );
        let ds = ClimateDataset::new(
            vec![cov],
            idx,
            Splits {
                train_end: 732,
                val_end: 744,
            },
        )
        .unwrap();
        let u = 8;
        let total: usize = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| ds.targets_in(s, u).len())
            .sum();
        assert_eq!(total, 752);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        ds.save(dir.path()).unwrap();
        let back = ClimateDataset::load(dir.path()).unwrap();
        assert_eq!(back.n_months, ds.n_months);
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.covariates[0].values, ds.covariates[0].values);
        for (a, b) in back.index.values.iter().zip(&ds.index.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
