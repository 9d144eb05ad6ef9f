//! Grid-stack files: the portable on-disk form of one variable's monthly
//! raster stack.
//!
//! Layout (all integers u64 little-endian, reals f32 little-endian):
//!   magic "GRD1" | grid_h | grid_w | n_months | start_year (i64)
//!   | start_month | name_len | name bytes (UTF-8)
//!   | payload: n_months * grid_h * grid_w reals, month-major row-major.
//! Months are contiguous from the start stamp. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DataError, Result};
use crate::months::MonthStamp;

pub const MAGIC: &[u8; 4] = b"GRD1";

/// One variable's stack of monthly rasters on a fixed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridStack {
    pub name: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub start: MonthStamp,
    /// n_months * grid_h * grid_w, month-major.
    pub values: Vec<f32>,
}

impl GridStack {
    pub fn new(
        name: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        start: MonthStamp,
        values: Vec<f32>,
    ) -> Self {
        let name = name.into();
        assert_eq!(
            values.len() % (grid_h * grid_w),
            0,
            "ragged stack for {name}"
        );
        Self {
            name,
            grid_h,
            grid_w,
            start,
            values,
        }
    }

    pub fn n_months(&self) -> usize {
        self.values.len() / (self.grid_h * self.grid_w)
    }

    pub fn raster(&self, t: usize) -> &[f32] {
        let plane = self.grid_h * self.grid_w;
        &self.values[t * plane..(t + 1) * plane]
    }

    pub fn month(&self, t: usize) -> MonthStamp {
        self.start.plus(t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid_h as u64).to_le_bytes())?;
        w.write_all(&(self.grid_w as u64).to_le_bytes())?;
        w.write_all(&(self.n_months() as u64).to_le_bytes())?;
        w.write_all(&(self.start.year as i64).to_le_bytes())?;
        w.write_all(&(self.start.month as u64).to_le_bytes())?;
        w.write_all(&(self.name.len() as u64).to_le_bytes())?;
        w.write_all(self.name.as_bytes())?;
        for &v in &self.values {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DataError::Format(format!("bad magic {magic:?}")));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let grid_h = read_u64(&mut r)? as usize;
        let grid_w = read_u64(&mut r)? as usize;
        let n_months = read_u64(&mut r)? as usize;
        let year = read_u64(&mut r)? as i64 as i32;
        let month = read_u64(&mut r)? as u32;
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 1 << 12 {
            return Err(DataError::Format(format!(
                "implausible name length {name_len}"
            )));
        }
        if grid_h == 0 || grid_w == 0 || grid_h * grid_w * n_months > (1 << 31) {
            return Err(DataError::Format(format!(
                "implausible dims {grid_h}x{grid_w} x {n_months}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| DataError::Format(format!("name not UTF-8: {e}")))?;
        let mut payload = vec![0u8; n_months * grid_h * grid_w * 4];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Self {
            name,
            grid_h,
            grid_w,
            start: MonthStamp::new(year, month),
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Self::read_from(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let stack = GridStack::new(
            "swi",
            2,
            3,
            MonthStamp::new(1990, 7),
            vec![
                0.5,
                -1.25,
                f32::MIN_POSITIVE,
                3.75e8,
                0.0,
                -0.0,
                1.0,
                2.0,
                3.0,
                4.0,
                5.0,
                6.0,
            ],
        );
        let mut buf = Vec::new();
        stack.write_to(&mut buf).unwrap();
        let back = GridStack::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.name, "swi");
        assert_eq!(back.n_months(), 2);
        assert_eq!(back.start, MonthStamp::new(1990, 7));
        for (a, b) in back.values.iter().zip(&stack.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let stack = GridStack::new("x", 2, 2, MonthStamp::new(2000, 1), vec![1.0; 8]);
        let mut buf = Vec::new();
        stack.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(GridStack::read_from(buf.as_slice()).is_err());
    }
}
