//! Append-only operation tape for reverse-mode differentiation.
//!
//! Every recorded node keeps its forward value, so the backward sweep can
//! reference forward results without recomputation. Backward passes emit
//! ordinary tape ops, which makes gradients themselves differentiable
//! (needed once: the gradient-penalty term differentiates a gradient norm
//! with respect to critic parameters — see the train crate).
//!
//! A tape is single-threaded by contract: distinct tapes on distinct threads
//! are independent. The handle is `Send` so detached tensors and parameters
//! can be shared freely.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

pub type NodeId = usize;

/// A recorded operation. Ids reference earlier nodes on the same tape.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    /// Watched input; gradients are requested with respect to leaves.
    Leaf,
    /// On-tape constant (masks, noise draws, data batches). Never receives
    /// gradient; replay uses the stored value.
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f32),
    AddScalar(NodeId, f32),
    LeakyRelu(NodeId, f32),
    Sigmoid(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    /// x^p, defined for x > 0 when p is non-integral (callers guard with ε).
    Powf(NodeId, f32),
    /// [m,k] @ [k,n]
    Matmul(NodeId, NodeId),
    /// 2-D transpose
    Transpose(NodeId),
    Reshape(NodeId),
    BroadcastTo(NodeId),
    /// Sum over axes (kept as size-1 dims).
    SumAxes(NodeId, Vec<usize>),
    SumAll(NodeId),
    /// out[i] = x[map[i]] (map[i] < 0 reads zero). Adjoint of ScatterAdd.
    Gather {
        x: NodeId,
        map: Arc<Vec<i64>>,
    },
    /// out[map[i]] += x[i]. Adjoint of Gather.
    ScatterAdd {
        x: NodeId,
        map: Arc<Vec<i64>>,
    },
    Permute4(NodeId, [usize; 4]),
    /// Zero-pad spatial dims by [top, bottom, left, right].
    Pad2d(NodeId, [usize; 4]),
    Crop2d(NodeId, [usize; 4]),
    ConcatC(Vec<NodeId>),
    SliceC {
        x: NodeId,
        start: usize,
        len: usize,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f32>>,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Cheaply cloneable handle to a shared tape.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Arc<Mutex<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes past `len`. Used to release backward scratch when the
    /// caller does not retain the gradient graph, and to clear per-step tapes.
    pub fn truncate(&self, len: usize) {
        self.inner.lock().unwrap().nodes.truncate(len);
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(&self, op: Op, shape: Vec<usize>, data: Arc<Vec<f32>>) -> NodeId {
        let mut inner = self.inner.lock().unwrap();
        inner.nodes.push(Node { op, shape, data });
        inner.nodes.len() - 1
    }

    pub(crate) fn node_tensor(&self, id: NodeId) -> (Vec<usize>, Arc<Vec<f32>>) {
        let inner = self.inner.lock().unwrap();
        let n = &inner.nodes[id];
        (n.shape.clone(), Arc::clone(&n.data))
    }

    pub(crate) fn snapshot(&self, upto: NodeId) -> Vec<(Op, Vec<usize>)> {
        let inner = self.inner.lock().unwrap();
        inner.nodes[..=upto]
            .iter()
            .map(|n| (n.op.clone(), n.shape.clone()))
            .collect()
    }

    /// Recompute node `target` in f64, overriding leaf/const values by id.
    /// This is the finite-difference oracle's evaluator: it replays the exact
    /// recorded computation (including any differentiable backward ops already
    /// on the tape) at higher precision.
    pub fn replay_f64(&self, overrides: &HashMap<NodeId, Vec<f64>>, target: NodeId) -> Vec<f64> {
        use crate::kernels as k;
        let inner = self.inner.lock().unwrap();
        let nodes = &inner.nodes;
        let mut vals: Vec<Option<Vec<f64>>> = vec![None; target + 1];

        // Mark nodes needed for the target to avoid evaluating unrelated ops.
        let mut needed = vec![false; target + 1];
        needed[target] = true;
        for id in (0..=target).rev() {
            if !needed[id] {
                continue;
            }
            for dep in op_inputs(&nodes[id].op) {
                if dep <= target {
                    needed[dep] = true;
                }
            }
        }

        for id in 0..=target {
            if !needed[id] {
                continue;
            }
            let node = &nodes[id];
            let get = |i: NodeId| -> &[f64] { vals[i].as_ref().unwrap().as_slice() };
            let out: Vec<f64> = match &node.op {
                Op::Leaf | Op::Const => match overrides.get(&id) {
                    Some(v) => v.clone(),
                    None => node.data.iter().map(|&v| v as f64).collect(),
                },
                Op::Add(a, b) => zip2(get(*a), get(*b), |x, y| x + y),
                Op::Sub(a, b) => zip2(get(*a), get(*b), |x, y| x - y),
                Op::Mul(a, b) => zip2(get(*a), get(*b), |x, y| x * y),
                Op::Maximum(a, b) => zip2(get(*a), get(*b), f64::max),
                Op::Neg(a) => get(*a).iter().map(|v| -v).collect(),
                Op::Scale(a, c) => get(*a).iter().map(|v| v * *c as f64).collect(),
                Op::AddScalar(a, c) => get(*a).iter().map(|v| v + *c as f64).collect(),
                Op::LeakyRelu(a, s) => get(*a)
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { v * *s as f64 })
                    .collect(),
                Op::Sigmoid(a) => get(*a).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
                Op::Exp(a) => get(*a).iter().map(|v| v.exp()).collect(),
                Op::Abs(a) => get(*a).iter().map(|v| v.abs()).collect(),
                Op::Powf(a, p) => get(*a).iter().map(|v| v.powf(*p as f64)).collect(),
                Op::Matmul(a, b) => {
                    let (m, kk) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let n = nodes[*b].shape[1];
                    k::matmul(get(*a), get(*b), m, kk, n)
                }
                Op::Transpose(a) => {
                    let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    k::transpose2d(get(*a), r, c)
                }
                Op::Reshape(a) => get(*a).to_vec(),
                Op::BroadcastTo(a) => k::broadcast_to(get(*a), &nodes[*a].shape, &node.shape),
                Op::SumAxes(a, axes) => k::sum_axes(get(*a), &nodes[*a].shape, axes).0,
                Op::SumAll(a) => vec![get(*a).iter().sum()],
                Op::Gather { x, map } => k::gather(get(*x), map),
                Op::ScatterAdd { x, map } => {
                    k::scatter_add(get(*x), map, node.shape.iter().product())
                }
                Op::Permute4(a, perm) => k::permute4(get(*a), &nodes[*a].shape, *perm).0,
                Op::Pad2d(a, pad) => k::pad2d(get(*a), &nodes[*a].shape, *pad).0,
                Op::Crop2d(a, crop) => k::crop2d(get(*a), &nodes[*a].shape, *crop).0,
                Op::ConcatC(parts) => {
                    let views: Vec<(&[f64], &[usize])> = parts
                        .iter()
                        .map(|&p| {
                            (
                                vals[p].as_ref().unwrap().as_slice(),
                                nodes[p].shape.as_slice(),
                            )
                        })
                        .collect();
                    k::concat_channels(&views).0
                }
                Op::SliceC { x, start, len } => {
                    k::slice_channels(get(*x), &nodes[*x].shape, *start, *len).0
                }
            };
            vals[id] = Some(out);
        }
        vals[target].take().unwrap()
    }
}

fn zip2(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Const => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Maximum(a, b) | Op::Matmul(a, b) => {
            vec![*a, *b]
        }
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::LeakyRelu(a, _)
        | Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Abs(a)
        | Op::Powf(a, _)
        | Op::Transpose(a)
        | Op::Reshape(a)
        | Op::BroadcastTo(a)
        | Op::SumAxes(a, _)
        | Op::SumAll(a)
        | Op::Permute4(a, _)
        | Op::Pad2d(a, _)
        | Op::Crop2d(a, _) => vec![*a],
        Op::Gather { x, .. } | Op::ScatterAdd { x, .. } | Op::SliceC { x, .. } => vec![*x],
        Op::ConcatC(parts) => parts.clone(),
    }
}
