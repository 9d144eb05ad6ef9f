//! Differentiable augmentation: random translations and cutouts, realized as
//! a constant index map so generator gradients pass through untouched pixels
//! and vanish on hidden ones.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swigan_tensor::{GridTensor, Result};

/// One per-sample draw of transforms. The same draw applies to a map and to
/// its context channels so the pair stays aligned.
#[derive(Clone, Debug)]
pub struct AugmentDraw {
    /// Per-sample (dy, dx), each uniform in [-ceil(H/8), +ceil(H/8)].
    pub shifts: Vec<(i64, i64)>,
    /// Per-sample cutout center (cy, cx), uniform over the grid; the square
    /// has side ceil(H/2) and clips at the borders.
    pub cutouts: Vec<(i64, i64)>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl AugmentDraw {
    pub fn sample(n: usize, grid_h: usize, grid_w: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (grid_h as f64 * 0.125).ceil() as i64;
        let shifts = (0..n)
            .map(|_| (rng.gen_range(-bound..=bound), rng.gen_range(-bound..=bound)))
            .collect();
        let cutouts = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0..grid_h as i64),
                    rng.gen_range(0..grid_w as i64),
                )
            })
            .collect();
        Self {
            shifts,
            cutouts,
            grid_h,
            grid_w,
        }
    }

    /// The identity draw: zero shifts and the cutout fully off-grid.
    pub fn identity(n: usize, grid_h: usize, grid_w: usize) -> Self {
        Self {
            shifts: vec![(0, 0); n],
            cutouts: vec![(-(grid_h as i64) * 2, -(grid_w as i64) * 2); n],
            grid_h,
            grid_w,
        }
    }

    /// 0/1 visibility per pixel: survives the shift and misses the cutout.
    pub fn visibility_mask(&self) -> Vec<f32> {
        let (h, w) = (self.grid_h as i64, self.grid_w as i64);
        let side = (self.grid_h as f64 / 2.0).ceil() as i64;
        let mut mask = vec![0.0f32; self.shifts.len() * (h * w) as usize];
        for (s, (&(dy, dx), &(cy, cx))) in self.shifts.iter().zip(&self.cutouts).enumerate() {
            for y in 0..h {
                for x in 0..w {
                    // source pixel (y, x) lands at (y + dy, x + dx)
                    let (oy, ox) = (y + dy, x + dx);
                    if oy < 0 || oy >= h || ox < 0 || ox >= w {
                        continue;
                    }
                    let in_cut = (oy - (cy - side / 2)) >= 0
                        && (oy - (cy - side / 2)) < side
                        && (ox - (cx - side / 2)) >= 0
                        && (ox - (cx - side / 2)) < side;
                    if !in_cut {
                        mask[(s as i64 * h * w + y * w + x) as usize] = 1.0;
                    }
                }
            }
        }
        mask
    }
}

/// Apply the draw to an [N,C,H,W] tensor. Differentiable with respect to x.
pub fn diff_augment(x: &GridTensor, draw: &AugmentDraw) -> Result<GridTensor> {
    let shape = x.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2] as i64, shape[3] as i64);
    assert_eq!(
        n,
        draw.shifts.len(),
        "draw covers {} samples, batch has {n}",
        draw.shifts.len()
    );
    assert_eq!((h as usize, w as usize), (draw.grid_h, draw.grid_w));
    let side = (draw.grid_h as f64 / 2.0).ceil() as i64;

    let mut map = Vec::with_capacity(x.numel());
    for s in 0..n {
        let (dy, dx) = draw.shifts[s];
        let (cy, cx) = draw.cutouts[s];
        let (cut_y0, cut_x0) = (cy - side / 2, cx - side / 2);
        for ch in 0..c {
            for oy in 0..h {
                for ox in 0..w {
                    let in_cut =
                        oy >= cut_y0 && oy < cut_y0 + side && ox >= cut_x0 && ox < cut_x0 + side;
                    let (sy, sx) = (oy - dy, ox - dx);
                    let idx = if in_cut || sy < 0 || sy >= h || sx < 0 || sx >= w {
                        -1
                    } else {
                        ((s * c + ch) as i64 * h + sy) * w + sx
                    };
                    map.push(idx);
                }
            }
        }
    }
    x.gather(&Arc::new(map), shape)
}
