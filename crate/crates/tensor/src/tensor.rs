//! `GridTensor`: a dense row-major f32 tensor with optional tape tracking.
//!
//! Operations on detached tensors compute eagerly and record nothing, so
//! inference paths pay no tape overhead. As soon as one operand is tracked,
//! the result is tracked on the same tape (detached operands are recorded
//! as constants so the backward and the f64 replay can reference them).

use std::sync::Arc;

use crate::error::{shape_err, Result, TensorError};
use crate::kernels as k;
use crate::tape::{NodeId, Op, Tape};

#[derive(Clone)]
pub struct GridTensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    node: Option<(Tape, NodeId)>,
}

impl std::fmt::Debug for GridTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridTensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl GridTensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![v; n])
    }

    pub fn scalar(v: f32) -> Self {
        Self::from_vec(vec![1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// A copy sharing the same buffer but detached from any tape.
    /// A detached tensor never receives gradient.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub(crate) fn from_node(tape: &Tape, id: NodeId) -> Self {
        let (shape, data) = tape.node_tensor(id);
        Self {
            shape,
            data,
            node: Some((tape.clone(), id)),
        }
    }
}

impl Tape {
    /// Track `t` as a differentiation leaf. Gradients can be requested for
    /// the returned tensor.
    pub fn watch(&self, t: &GridTensor) -> GridTensor {
        let id = self.push(Op::Leaf, t.shape.clone(), Arc::clone(&t.data));
        GridTensor {
            shape: t.shape.clone(),
            data: Arc::clone(&t.data),
            node: Some((self.clone(), id)),
        }
    }

    /// Record `t` as an on-tape constant: visible to replay, no gradient.
    pub fn constant(&self, t: &GridTensor) -> GridTensor {
        let id = self.push(Op::Const, t.shape.clone(), Arc::clone(&t.data));
        GridTensor {
            shape: t.shape.clone(),
            data: Arc::clone(&t.data),
            node: Some((self.clone(), id)),
        }
    }
}

/// Resolve the tape for a binary op, recording detached operands as constants.
fn binary_ids(a: &GridTensor, b: &GridTensor) -> Result<Option<(Tape, NodeId, NodeId)>> {
    match (&a.node, &b.node) {
        (None, None) => Ok(None),
        (Some((ta, ia)), Some((tb, ib))) => {
            if !ta.same_tape(tb) {
                return Err(TensorError::TapeMismatch);
            }
            Ok(Some((ta.clone(), *ia, *ib)))
        }
        (Some((ta, ia)), None) => {
            let ib = ta.push(Op::Const, b.shape.clone(), Arc::clone(&b.data));
            Ok(Some((ta.clone(), *ia, ib)))
        }
        (None, Some((tb, ib))) => {
            let ia = tb.push(Op::Const, a.shape.clone(), Arc::clone(&a.data));
            Ok(Some((tb.clone(), ia, *ib)))
        }
    }
}

fn track(
    tape_ids: Option<(Tape, impl FnOnce(&Tape) -> Op)>,
    shape: Vec<usize>,
    data: Vec<f32>,
) -> GridTensor {
    let data = Arc::new(data);
    let node = tape_ids.map(|(tape, op_fn)| {
        let op = op_fn(&tape);
        let id = tape.push(op, shape.clone(), Arc::clone(&data));
        (tape, id)
    });
    GridTensor { shape, data, node }
}

macro_rules! same_shape {
    ($op:literal, $a:expr, $b:expr) => {
        if $a.shape != $b.shape {
            return Err(shape_err($op, format!("{:?} vs {:?}", $a.shape, $b.shape)));
        }
    };
}

impl GridTensor {
    fn unary(
        &self,
        op_fn: impl FnOnce(NodeId) -> Op,
        data: Vec<f32>,
        shape: Vec<usize>,
    ) -> GridTensor {
        match &self.node {
            Some((tape, id)) => {
                let id = *id;
                track(
                    Some((tape.clone(), move |_t: &Tape| op_fn(id))),
                    shape,
                    data,
                )
            }
            None => track(None::<(Tape, fn(&Tape) -> Op)>, shape, data),
        }
    }

    pub fn add(&self, rhs: &GridTensor) -> Result<GridTensor> {
        same_shape!("add", self, rhs);
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        let ids = binary_ids(self, rhs)?;
        Ok(track(
            ids.map(|(t, a, b)| (t, move |_: &Tape| Op::Add(a, b))),
            self.shape.clone(),
            data,
        ))
    }

    pub fn sub(&self, rhs: &GridTensor) -> Result<GridTensor> {
        same_shape!("sub", self, rhs);
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        let ids = binary_ids(self, rhs)?;
        Ok(track(
            ids.map(|(t, a, b)| (t, move |_: &Tape| Op::Sub(a, b))),
            self.shape.clone(),
            data,
        ))
    }

    pub fn mul(&self, rhs: &GridTensor) -> Result<GridTensor> {
        same_shape!("mul", self, rhs);
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a * b)
            .collect();
        let ids = binary_ids(self, rhs)?;
        Ok(track(
            ids.map(|(t, a, b)| (t, move |_: &Tape| Op::Mul(a, b))),
            self.shape.clone(),
            data,
        ))
    }

    /// Elementwise maximum. Ties route gradient to `self`.
    pub fn maximum(&self, rhs: &GridTensor) -> Result<GridTensor> {
        same_shape!("maximum", self, rhs);
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a.max(*b))
            .collect();
        let ids = binary_ids(self, rhs)?;
        Ok(track(
            ids.map(|(t, a, b)| (t, move |_: &Tape| Op::Maximum(a, b))),
            self.shape.clone(),
            data,
        ))
    }

    pub fn neg(&self) -> GridTensor {
        let data = self.data.iter().map(|v| -v).collect();
        self.unary(Op::Neg, data, self.shape.clone())
    }

    pub fn scale(&self, c: f32) -> GridTensor {
        let data = self.data.iter().map(|v| v * c).collect();
        self.unary(move |id| Op::Scale(id, c), data, self.shape.clone())
    }

    pub fn add_scalar(&self, c: f32) -> GridTensor {
        let data = self.data.iter().map(|v| v + c).collect();
        self.unary(move |id| Op::AddScalar(id, c), data, self.shape.clone())
    }

    pub fn leaky_relu(&self, slope: f32) -> GridTensor {
        let data = self
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { v * slope })
            .collect();
        self.unary(move |id| Op::LeakyRelu(id, slope), data, self.shape.clone())
    }

    pub fn sigmoid(&self) -> GridTensor {
        let data = self
            .data
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.unary(Op::Sigmoid, data, self.shape.clone())
    }

    pub fn exp(&self) -> GridTensor {
        let data = self.data.iter().map(|v| v.exp()).collect();
        self.unary(Op::Exp, data, self.shape.clone())
    }

    pub fn abs(&self) -> GridTensor {
        let data = self.data.iter().map(|v| v.abs()).collect();
        self.unary(Op::Abs, data, self.shape.clone())
    }

    /// Elementwise x^p. For non-integral p the input must be positive;
    /// callers add an ε before calling (see `l2_norm`).
    pub fn powf(&self, p: f32) -> GridTensor {
        let data = self.data.iter().map(|v| v.powf(p)).collect();
        self.unary(move |id| Op::Powf(id, p), data, self.shape.clone())
    }

    pub fn matmul(&self, rhs: &GridTensor) -> Result<GridTensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} @ {:?}", self.shape, rhs.shape),
            ));
        }
        let (m, kk, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let data = k::matmul(&self.data, &rhs.data, m, kk, n);
        let ids = binary_ids(self, rhs)?;
        Ok(track(
            ids.map(|(t, a, b)| (t, move |_: &Tape| Op::Matmul(a, b))),
            vec![m, n],
            data,
        ))
    }

    /// 2-D transpose.
    pub fn t(&self) -> Result<GridTensor> {
        if self.shape.len() != 2 {
            return Err(shape_err("transpose", format!("{:?}", self.shape)));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let data = k::transpose2d(&self.data, r, c);
        Ok(self.unary(Op::Transpose, data, vec![c, r]))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<GridTensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(self.unary(Op::Reshape, self.to_vec(), shape))
    }

    pub fn broadcast_to(&self, shape: Vec<usize>) -> Result<GridTensor> {
        if shape.len() < self.shape.len() {
            return Err(shape_err(
                "broadcast_to",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        let off = shape.len() - self.shape.len();
        for (d, &s) in self.shape.iter().enumerate() {
            if s != 1 && s != shape[off + d] {
                return Err(shape_err(
                    "broadcast_to",
                    format!("{:?} -> {:?}", self.shape, shape),
                ));
            }
        }
        let data = k::broadcast_to(&self.data, &self.shape, &shape);
        Ok(self.unary(Op::BroadcastTo, data, shape))
    }

    /// Sum over `axes`; summed dims kept as size 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<GridTensor> {
        for &a in axes {
            if a >= self.shape.len() {
                return Err(TensorError::InvalidArg(format!(
                    "axis {} out of range for shape {:?}",
                    a, self.shape
                )));
            }
        }
        let (data, shape) = k::sum_axes(&self.data, &self.shape, axes);
        let axes = axes.to_vec();
        Ok(self.unary(move |id| Op::SumAxes(id, axes), data, shape))
    }

    pub fn sum_all(&self) -> GridTensor {
        let s: f32 = self.data.iter().sum();
        self.unary(Op::SumAll, vec![s], vec![1])
    }

    pub fn mean_all(&self) -> GridTensor {
        self.sum_all().scale(1.0 / self.numel() as f32)
    }

    /// out[i] = self[map[i]] (negative map entries read zero).
    pub fn gather(&self, map: &Arc<Vec<i64>>, out_shape: Vec<usize>) -> Result<GridTensor> {
        if map.len() != out_shape.iter().product::<usize>() {
            return Err(shape_err(
                "gather",
                format!("map {} vs {:?}", map.len(), out_shape),
            ));
        }
        let data = k::gather(&self.data, map);
        let map = Arc::clone(map);
        Ok(self.unary(move |id| Op::Gather { x: id, map }, data, out_shape))
    }

    /// out[map[i]] += self[i] into a fresh zero tensor of `out_shape`.
    pub fn scatter_add(&self, map: &Arc<Vec<i64>>, out_shape: Vec<usize>) -> Result<GridTensor> {
        if map.len() != self.numel() {
            return Err(shape_err(
                "scatter_add",
                format!("map {} vs {:?}", map.len(), self.shape),
            ));
        }
        let out_len = out_shape.iter().product();
        let data = k::scatter_add(&self.data, map, out_len);
        let map = Arc::clone(map);
        Ok(self.unary(move |id| Op::ScatterAdd { x: id, map }, data, out_shape))
    }

    pub fn permute4(&self, perm: [usize; 4]) -> Result<GridTensor> {
        if self.shape.len() != 4 {
            return Err(shape_err("permute4", format!("{:?}", self.shape)));
        }
        let mut seen = [false; 4];
        for &p in &perm {
            if p > 3 || seen[p] {
                return Err(TensorError::InvalidArg(format!(
                    "bad permutation {:?}",
                    perm
                )));
            }
            seen[p] = true;
        }
        let (data, shape) = k::permute4(&self.data, &self.shape, perm);
        Ok(self.unary(move |id| Op::Permute4(id, perm), data, shape))
    }

    /// Zero-pad spatial dims of an [N,C,H,W] tensor by [top, bottom, left, right].
    pub fn pad2d(&self, pad: [usize; 4]) -> Result<GridTensor> {
        if self.shape.len() != 4 {
            return Err(shape_err("pad2d", format!("{:?}", self.shape)));
        }
        let (data, shape) = k::pad2d(&self.data, &self.shape, pad);
        Ok(self.unary(move |id| Op::Pad2d(id, pad), data, shape))
    }

    /// Remove [top, bottom, left, right] rows/cols from the spatial dims.
    pub fn crop2d(&self, crop: [usize; 4]) -> Result<GridTensor> {
        if self.shape.len() != 4 {
            return Err(shape_err("crop2d", format!("{:?}", self.shape)));
        }
        if crop[0] + crop[1] > self.shape[2] || crop[2] + crop[3] > self.shape[3] {
            return Err(shape_err(
                "crop2d",
                format!("crop {:?} exceeds {:?}", crop, self.shape),
            ));
        }
        let (data, shape) = k::crop2d(&self.data, &self.shape, crop);
        Ok(self.unary(move |id| Op::Crop2d(id, crop), data, shape))
    }

    /// Channels [start, start+len) of an [N,C,H,W] tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<GridTensor> {
        if self.shape.len() != 4 || start + len > self.shape[1] {
            return Err(shape_err(
                "slice_channels",
                format!("[{start},{}) of {:?}", start + len, self.shape),
            ));
        }
        let (data, shape) = k::slice_channels(&self.data, &self.shape, start, len);
        Ok(self.unary(move |id| Op::SliceC { x: id, start, len }, data, shape))
    }
}

/// Concatenate [N,Ci,H,W] tensors along the channel axis.
pub fn concat_channels(parts: &[&GridTensor]) -> Result<GridTensor> {
    if parts.is_empty() {
        return Err(TensorError::InvalidArg("concat of zero tensors".into()));
    }
    let first = parts[0];
    for p in parts {
        if p.shape().len() != 4 {
            return Err(shape_err("concat_channels", format!("{:?}", p.shape())));
        }
        if p.shape()[0] != first.shape()[0]
            || p.shape()[2] != first.shape()[2]
            || p.shape()[3] != first.shape()[3]
        {
            return Err(shape_err(
                "concat_channels",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
    }
    let views: Vec<(&[f32], &[usize])> = parts.iter().map(|p| (p.data(), p.shape())).collect();
    let (data, shape) = k::concat_channels(&views);

    // Find a tape among operands; record detached ones as constants.
    let tape = parts.iter().find_map(|p| p.tape().cloned());
    match tape {
        None => Ok(GridTensor::from_vec(shape, data)),
        Some(tape) => {
            for p in parts {
                if let Some(t) = p.tape() {
                    if !t.same_tape(&tape) {
                        return Err(TensorError::TapeMismatch);
                    }
                }
            }
            let ids: Vec<NodeId> = parts
                .iter()
                .map(|p| match p.node_id() {
                    Some(id) => id,
                    None => tape.push(Op::Const, p.shape().to_vec(), Arc::new(p.to_vec())),
                })
                .collect();
            let data = Arc::new(data);
            let id = tape.push(Op::ConcatC(ids), shape.clone(), Arc::clone(&data));
            Ok(GridTensor {
                shape,
                data,
                node: Some((tape, id)),
            })
        }
    }
}

/// Reverse-mode gradients of a scalar `output` with respect to `inputs`.
///
/// With `retain_graph` the returned gradients are themselves tracked on the
/// tape, so they can be composed further and differentiated again. Without
/// it, all scratch nodes recorded by the sweep are dropped and the results
/// come back detached.
///
/// Inputs not reachable from the output get a zero gradient and a warning.
pub fn grad(
    output: &GridTensor,
    inputs: &[&GridTensor],
    retain_graph: bool,
) -> Result<Vec<GridTensor>> {
    grad_quiet(output, inputs, retain_graph, true)
}

/// `grad` with the unreachable-input warning optional: training loops with
/// stochastic depth drop whole branches by design, so zero gradients there
/// are routine rather than suspicious.
pub fn grad_quiet(
    output: &GridTensor,
    inputs: &[&GridTensor],
    retain_graph: bool,
    warn_unreachable: bool,
) -> Result<Vec<GridTensor>> {
    let (tape, out_id) = match &output.node {
        Some((t, id)) => (t.clone(), *id),
        None => return Err(TensorError::NotOnTape("grad output")),
    };
    if output.numel() != 1 {
        return Err(TensorError::NotScalar(output.shape().to_vec()));
    }
    let mut input_ids = Vec::with_capacity(inputs.len());
    for inp in inputs {
        match &inp.node {
            Some((t, id)) if t.same_tape(&tape) => input_ids.push(*id),
            Some(_) => return Err(TensorError::TapeMismatch),
            None => return Err(TensorError::NotOnTape("grad input")),
        }
    }

    let pre_len = tape.len();
    let ops = tape.snapshot(out_id);

    let mut grads: Vec<Option<GridTensor>> = vec![None; out_id + 1];
    grads[out_id] = Some(tape.constant(&GridTensor::scalar(1.0)));

    for id in (0..=out_id).rev() {
        let g = match grads[id].take() {
            Some(g) => g,
            None => continue,
        };
        let op = ops[id].0.clone();
        accumulate_op(&tape, id, &op, &g, &ops, &mut grads)?;
        grads[id] = Some(g);
    }

    let mut results = Vec::with_capacity(inputs.len());
    for (&id, inp) in input_ids.iter().zip(inputs) {
        let g = match grads[id].take() {
            Some(g) => {
                grads[id] = Some(g.clone());
                g
            }
            None => {
                if warn_unreachable {
                    log::warn!(
                        "grad: input with shape {:?} is not reachable from the output; returning zeros",
                        inp.shape()
                    );
                }
                let zeros = GridTensor::zeros(inp.shape().to_vec());
                if retain_graph {
                    tape.constant(&zeros)
                } else {
                    zeros
                }
            }
        };
        results.push(g);
    }

    if !retain_graph {
        results = results.iter().map(|g| g.detach()).collect();
        tape.truncate(pre_len);
    }
    Ok(results)
}

/// Push this node's vjp contributions onto its inputs' accumulators.
fn accumulate_op(
    tape: &Tape,
    node_id: NodeId,
    op: &Op,
    g: &GridTensor,
    ops: &[(Op, Vec<usize>)],
    grads: &mut [Option<GridTensor>],
) -> Result<()> {
    let input = |id: NodeId| GridTensor::from_node(tape, id);
    let in_shape = |id: NodeId| ops[id].1.clone();
    let acc = |id: NodeId, contrib: GridTensor, grads: &mut [Option<GridTensor>]| -> Result<()> {
        grads[id] = Some(match grads[id].take() {
            Some(prev) => prev.add(&contrib)?,
            None => contrib,
        });
        Ok(())
    };

    match op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            acc(*a, g.clone(), grads)?;
            acc(*b, g.clone(), grads)?;
        }
        Op::Sub(a, b) => {
            acc(*a, g.clone(), grads)?;
            acc(*b, g.neg(), grads)?;
        }
        Op::Mul(a, b) => {
            acc(*a, g.mul(&input(*b))?, grads)?;
            acc(*b, g.mul(&input(*a))?, grads)?;
        }
        Op::Maximum(a, b) => {
            // Locally constant masks; ties go to the first operand.
            let (av, bv) = (input(*a), input(*b));
            let mask: Vec<f32> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| if x >= y { 1.0 } else { 0.0 })
                .collect();
            let mask_a = tape.constant(&GridTensor::from_vec(av.shape().to_vec(), mask.clone()));
            let inv: Vec<f32> = mask.iter().map(|m| 1.0 - m).collect();
            let mask_b = tape.constant(&GridTensor::from_vec(av.shape().to_vec(), inv));
            acc(*a, g.mul(&mask_a)?, grads)?;
            acc(*b, g.mul(&mask_b)?, grads)?;
        }
        Op::Neg(a) => acc(*a, g.neg(), grads)?,
        Op::Scale(a, c) => acc(*a, g.scale(*c), grads)?,
        Op::AddScalar(a, _) => acc(*a, g.clone(), grads)?,
        Op::LeakyRelu(a, s) => {
            let x = input(*a);
            let mask: Vec<f32> = x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else { *s })
                .collect();
            let mask = tape.constant(&GridTensor::from_vec(x.shape().to_vec(), mask));
            acc(*a, g.mul(&mask)?, grads)?;
        }
        Op::Sigmoid(a) => {
            // dy/dx = y (1 - y); reference the forward output node so the
            // second derivative stays exact.
            let y = GridTensor::from_node(tape, node_id);
            let one_minus = y.neg().add_scalar(1.0);
            acc(*a, g.mul(&y)?.mul(&one_minus)?, grads)?;
        }
        Op::Exp(a) => {
            let y = GridTensor::from_node(tape, node_id);
            acc(*a, g.mul(&y)?, grads)?;
        }
        Op::Abs(a) => {
            let x = input(*a);
            let sign: Vec<f32> = x
                .data()
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let sign = tape.constant(&GridTensor::from_vec(x.shape().to_vec(), sign));
            acc(*a, g.mul(&sign)?, grads)?;
        }
        Op::Powf(a, p) => {
            let x = input(*a);
            acc(*a, g.mul(&x.powf(p - 1.0).scale(*p))?, grads)?;
        }
        Op::Matmul(a, b) => {
            let (av, bv) = (input(*a), input(*b));
            acc(*a, g.matmul(&bv.t()?)?, grads)?;
            acc(*b, av.t()?.matmul(g)?, grads)?;
        }
        Op::Transpose(a) => acc(*a, g.t()?, grads)?,
        Op::Reshape(a) => acc(*a, g.reshape(in_shape(*a))?, grads)?,
        Op::BroadcastTo(a) => {
            let ins = in_shape(*a);
            let out_rank = g.shape().len();
            let off = out_rank - ins.len();
            let mut axes = Vec::new();
            for d in 0..out_rank {
                let in_dim = if d < off { 1 } else { ins[d - off] };
                if in_dim == 1 && g.shape()[d] != 1 {
                    axes.push(d);
                }
            }
            let reduced = if axes.is_empty() {
                g.clone()
            } else {
                g.sum_axes(&axes)?
            };
            acc(*a, reduced.reshape(ins)?, grads)?;
        }
        Op::SumAxes(a, _) => acc(*a, g.broadcast_to(in_shape(*a))?, grads)?,
        Op::SumAll(a) => acc(*a, g.broadcast_to(in_shape(*a))?, grads)?,
        Op::Gather { x, map } => {
            let ins = in_shape(*x);
            acc(*x, g.scatter_add(map, ins)?, grads)?;
        }
        Op::ScatterAdd { x, map } => {
            let ins = in_shape(*x);
            acc(*x, g.gather(map, ins)?, grads)?;
        }
        Op::Permute4(a, perm) => {
            let mut inv = [0usize; 4];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            acc(*a, g.permute4(inv)?, grads)?;
        }
        Op::Pad2d(a, pad) => acc(*a, g.crop2d(*pad)?, grads)?,
        Op::Crop2d(a, crop) => acc(*a, g.pad2d(*crop)?, grads)?,
        Op::ConcatC(parts) => {
            let mut start = 0;
            for &p in parts {
                let c = ops[p].1[1];
                acc(p, g.slice_channels(start, c)?, grads)?;
                start += c;
            }
        }
        Op::SliceC { x, start, len } => {
            let ins = in_shape(*x);
            let c_total = ins[1];
            let mut pieces: Vec<GridTensor> = Vec::new();
            if *start > 0 {
                let mut s = ins.clone();
                s[1] = *start;
                pieces.push(tape.constant(&GridTensor::zeros(s)));
            }
            pieces.push(g.clone());
            if start + len < c_total {
                let mut s = ins.clone();
                s[1] = c_total - start - len;
                pieces.push(tape.constant(&GridTensor::zeros(s)));
            }
            let refs: Vec<&GridTensor> = pieces.iter().collect();
            acc(*x, concat_channels(&refs)?, grads)?;
        }
    }
    Ok(())
}
