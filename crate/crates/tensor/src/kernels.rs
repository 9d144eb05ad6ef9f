//! Shape-aware numeric kernels, generic over f32/f64.
//!
//! The forward pass and analytic gradients run in f32; the finite-difference
//! oracle replays the same kernels in f64 (see `gradcheck`).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f32(v: f32) -> Self;
    fn exp_(self) -> Self;
    fn abs_(self) -> Self;
    fn powf_(self, p: f32) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn abs_(self) -> Self {
        self.abs()
    }
    fn powf_(self, p: f32) -> Self {
        self.powf(p)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn abs_(self) -> Self {
        self.abs()
    }
    fn powf_(self, p: f32) -> Self {
        self.powf(p as f64)
    }
}

/// C[m,n] = A[m,k] @ B[k,n]. ikj loop order so the inner loop is contiguous.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::ZERO; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
    c
}

/// 2-D transpose: out[j,i] = in[i,j].
pub fn transpose2d<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// out[i] = x[map[i]] for map[i] >= 0, else 0.
pub fn gather<S: Scalar>(x: &[S], map: &[i64]) -> Vec<S> {
    map.iter()
        .map(|&ix| if ix >= 0 { x[ix as usize] } else { S::ZERO })
        .collect()
}

/// out[map[i]] += x[i] for map[i] >= 0. Fixed iteration order keeps the
/// accumulation deterministic.
pub fn scatter_add<S: Scalar>(x: &[S], map: &[i64], out_len: usize) -> Vec<S> {
    debug_assert_eq!(x.len(), map.len());
    let mut out = vec![S::ZERO; out_len];
    for (&v, &ix) in x.iter().zip(map) {
        if ix >= 0 {
            out[ix as usize] += v;
        }
    }
    out
}

pub fn permute4<S: Scalar>(x: &[S], shape: &[usize], perm: [usize; 4]) -> (Vec<S>, Vec<usize>) {
    debug_assert_eq!(shape.len(), 4);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let mut out = vec![S::ZERO; x.len()];
    let (o0, o1, o2, o3) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let mut w = 0;
    for i0 in 0..o0 {
        for i1 in 0..o1 {
            for i2 in 0..o2 {
                for i3 in 0..o3 {
                    let idx = [i0, i1, i2, i3];
                    let mut src = 0;
                    for d in 0..4 {
                        src += idx[d] * in_strides[perm[d]];
                    }
                    out[w] = x[src];
                    w += 1;
                }
            }
        }
    }
    (out, out_shape)
}

/// Zero-pad the two trailing spatial dims of an [N,C,H,W] tensor.
/// `pad` is [top, bottom, left, right].
pub fn pad2d<S: Scalar>(x: &[S], shape: &[usize], pad: [usize; 4]) -> (Vec<S>, Vec<usize>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (t, b, l, r) = (pad[0], pad[1], pad[2], pad[3]);
    let (oh, ow) = (h + t + b, w + l + r);
    let mut out = vec![S::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        for i in 0..h {
            let src = nc * h * w + i * w;
            let dst = nc * oh * ow + (i + t) * ow + l;
            out[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    (out, vec![n, c, oh, ow])
}

/// Remove [top, bottom, left, right] from the spatial dims (inverse of pad2d).
pub fn crop2d<S: Scalar>(x: &[S], shape: &[usize], crop: [usize; 4]) -> (Vec<S>, Vec<usize>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (t, b, l, r) = (crop[0], crop[1], crop[2], crop[3]);
    let (oh, ow) = (h - t - b, w - l - r);
    let mut out = vec![S::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        for i in 0..oh {
            let src = nc * h * w + (i + t) * w + l;
            let dst = nc * oh * ow + i * ow;
            out[dst..dst + ow].copy_from_slice(&x[src..src + ow]);
        }
    }
    (out, vec![n, c, oh, ow])
}

/// Concatenate [N,Ci,H,W] tensors along the channel axis.
pub fn concat_channels<S: Scalar>(parts: &[(&[S], &[usize])]) -> (Vec<S>, Vec<usize>) {
    let (n, h, w) = (parts[0].1[0], parts[0].1[2], parts[0].1[3]);
    let c_total: usize = parts.iter().map(|(_, s)| s[1]).sum();
    let mut out = vec![S::ZERO; n * c_total * h * w];
    let plane = h * w;
    for b in 0..n {
        let mut c_off = 0;
        for (data, shape) in parts {
            let c = shape[1];
            let src = b * c * plane;
            let dst = b * c_total * plane + c_off * plane;
            out[dst..dst + c * plane].copy_from_slice(&data[src..src + c * plane]);
            c_off += c;
        }
    }
    (out, vec![n, c_total, h, w])
}

/// Take channels [start, start+len) of an [N,C,H,W] tensor.
pub fn slice_channels<S: Scalar>(
    x: &[S],
    shape: &[usize],
    start: usize,
    len: usize,
) -> (Vec<S>, Vec<usize>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut out = vec![S::ZERO; n * len * plane];
    for b in 0..n {
        let src = b * c * plane + start * plane;
        let dst = b * len * plane;
        out[dst..dst + len * plane].copy_from_slice(&x[src..src + len * plane]);
    }
    (out, vec![n, len, h, w])
}

/// Sum over `axes`, keeping the summed dims as size 1.
pub fn sum_axes<S: Scalar>(x: &[S], shape: &[usize], axes: &[usize]) -> (Vec<S>, Vec<usize>) {
    let rank = shape.len();
    let mut out_shape = shape.to_vec();
    for &a in axes {
        out_shape[a] = 1;
    }
    let out_len: usize = out_shape.iter().product();
    let out_strides = strides(&out_shape);
    let mut out = vec![S::ZERO; out_len];
    let mut idx = vec![0usize; rank];
    for &v in x {
        let mut o = 0;
        for d in 0..rank {
            if out_shape[d] != 1 {
                o += idx[d] * out_strides[d];
            }
        }
        out[o] += v;
        // row-major increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Broadcast `x` of `in_shape` to `out_shape` (numpy right-aligned rules).
pub fn broadcast_to<S: Scalar>(x: &[S], in_shape: &[usize], out_shape: &[usize]) -> Vec<S> {
    let out_rank = out_shape.len();
    // Right-align in_shape against out_shape.
    let mut aligned = vec![1usize; out_rank];
    let off = out_rank - in_shape.len();
    aligned[off..].copy_from_slice(in_shape);
    let in_strides_aligned = {
        let s = strides(&aligned);
        let mut v = vec![0usize; out_rank];
        for d in 0..out_rank {
            v[d] = if aligned[d] == 1 { 0 } else { s[d] };
        }
        v
    };
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![S::ZERO; out_len];
    let mut idx = vec![0usize; out_rank];
    for o in out.iter_mut() {
        let mut src = 0;
        for d in 0..out_rank {
            src += idx[d] * in_strides_aligned[d];
        }
        *o = x[src];
        for d in (0..out_rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        s[d] = acc;
        acc *= shape[d];
    }
    s
}
