//! 2-D convolution and its transpose, built from gather/matmul/scatter so
//! that both directions (and their gradients, and the gradients of those
//! gradients) reduce to the core op set.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::GridTensor;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

pub fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

pub fn tconv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((extent - 1) * stride + k).checked_sub(2 * pad)
}

thread_local! {
    static MAP_CACHE: RefCell<HashMap<ConvGeom, Arc<Vec<i64>>>> = RefCell::new(HashMap::new());
}

/// Flat index map from an [N,C,H,W] tensor into im2col layout
/// [N*OH*OW, C*k*k]; -1 marks padding reads.
fn im2col_map(g: ConvGeom) -> Arc<Vec<i64>> {
    MAP_CACHE.with(|cache| {
        if let Some(m) = cache.borrow().get(&g) {
            return Arc::clone(m);
        }
        let (oh, ow) = (
            conv_out_extent(g.h, g.k, g.stride, g.pad),
            conv_out_extent(g.w, g.k, g.stride, g.pad),
        );
        let mut map = Vec::with_capacity(g.n * oh * ow * g.c * g.k * g.k);
        for n in 0..g.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..g.c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as i64 - g.pad as i64;
                                let ix = (ox * g.stride + kx) as i64 - g.pad as i64;
                                let v = if iy >= 0 && iy < g.h as i64 && ix >= 0 && ix < g.w as i64
                                {
                                    (((n * g.c + c) * g.h + iy as usize) * g.w) as i64 + ix
                                } else {
                                    -1
                                };
                                map.push(v);
                            }
                        }
                    }
                }
            }
        }
        let map = Arc::new(map);
        cache.borrow_mut().insert(g, Arc::clone(&map));
        map
    })
}

/// conv2d(input [N,C,H,W], weight [F,C,k,k], bias [F]) with square kernel.
///
/// Output spatial dims are floor((H + 2p - k)/s) + 1. Gradients are defined
/// with respect to input, weight and bias.
pub fn conv2d(
    input: &GridTensor,
    weight: &GridTensor,
    bias: Option<&GridTensor>,
    stride: usize,
    pad: usize,
) -> Result<GridTensor> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("input {:?}, weight {:?}", xs, ws),
        ));
    }
    if ws[2] != ws[3] {
        return Err(shape_err("conv2d", format!("non-square kernel {:?}", ws)));
    }
    if xs[1] != ws[1] {
        return Err(shape_err(
            "conv2d",
            format!(
                "input channels {} do not match weight channels {}",
                xs[1], ws[1]
            ),
        ));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, k) = (ws[0], ws[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(shape_err(
            "conv2d",
            format!(
                "kernel {k} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ),
        ));
    }
    if stride == 0 {
        return Err(shape_err("conv2d", "stride must be positive".to_string()));
    }
    let (oh, ow) = (
        conv_out_extent(h, k, stride, pad),
        conv_out_extent(w, k, stride, pad),
    );

    let map = im2col_map(ConvGeom {
        n,
        c,
        h,
        w,
        k,
        stride,
        pad,
    });
    let cols = input.gather(&map, vec![n * oh * ow, c * k * k])?;
    let wmat = weight.reshape(vec![f, c * k * k])?;
    let y = cols.matmul(&wmat.t()?)?; // [N*OH*OW, F]
    let mut out = y.reshape(vec![n, oh, ow, f])?.permute4([0, 3, 1, 2])?;
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} for {} filters", b.shape(), f),
            ));
        }
        let b4 = b
            .reshape(vec![1, f, 1, 1])?
            .broadcast_to(vec![n, f, oh, ow])?;
        out = out.add(&b4)?;
    }
    Ok(out)
}

/// conv2d_transposed(input [N,C,H,W], weight [C,F,k,k], bias [F]).
///
/// Output spatial dim is (H-1)*s - 2p + k. This is the adjoint of `conv2d`:
/// with zero bias, `conv2d_transposed(y, w)` equals the input-gradient of
/// `conv2d(x, w)` evaluated at cotangent y.
pub fn conv2d_transposed(
    input: &GridTensor,
    weight: &GridTensor,
    bias: Option<&GridTensor>,
    stride: usize,
    pad: usize,
) -> Result<GridTensor> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(shape_err(
            "conv2d_transposed",
            format!("input {:?}, weight {:?}", xs, ws),
        ));
    }
    if ws[2] != ws[3] {
        return Err(shape_err(
            "conv2d_transposed",
            format!("non-square kernel {:?}", ws),
        ));
    }
    if xs[1] != ws[0] {
        return Err(shape_err(
            "conv2d_transposed",
            format!(
                "input channels {} do not match weight dim0 {}",
                xs[1], ws[0]
            ),
        ));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, k) = (ws[1], ws[2]);
    let oh = tconv_out_extent(h, k, stride, pad)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("conv2d_transposed", format!("degenerate output for H={h}")))?;
    let ow = tconv_out_extent(w, k, stride, pad)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("conv2d_transposed", format!("degenerate output for W={w}")))?;

    // The forward conv that this op is adjoint to: [N,F,oh,ow] -> [N,C,h,w].
    let geom = ConvGeom {
        n,
        c: f,
        h: oh,
        w: ow,
        k,
        stride,
        pad,
    };
    debug_assert_eq!(conv_out_extent(oh, k, stride, pad), h);
    debug_assert_eq!(conv_out_extent(ow, k, stride, pad), w);

    let xmat = input.permute4([0, 2, 3, 1])?.reshape(vec![n * h * w, c])?;
    let wmat = weight.reshape(vec![c, f * k * k])?;
    let cols = xmat.matmul(&wmat)?; // [N*h*w, F*k*k]
    let map = im2col_map(geom);
    let mut out = cols.scatter_add(&map, vec![n, f, oh, ow])?;
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(shape_err(
                "conv2d_transposed",
                format!("bias {:?} for {} filters", b.shape(), f),
            ));
        }
        let b4 = b
            .reshape(vec![1, f, 1, 1])?
            .broadcast_to(vec![n, f, oh, ow])?;
        out = out.add(&b4)?;
    }
    Ok(out)
}
