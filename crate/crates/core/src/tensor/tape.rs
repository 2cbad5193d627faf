use super::ops::{Op, Unary};
use super::{axis_blocks, strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// An append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order: every
/// op only references vars that already exist.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Shorthand for a leaf that does not require gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("gradient buffer matches value")
        })
    }

    /// Like [`Tape::grad`], but yields zeros for vars the output does not depend on.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    /// Back-propagates from a one-element output, seeding its gradient with 1.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::shape(format!("backward needs a scalar output, got shape {:?}", self.shape(output))));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].requires_grad {
                self.propagate(id, &upstream);
            }
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let node = &self.nodes[id];
        // Each arm computes (input, gradient contribution) pairs first, then
        // accumulates, so the borrow of `node` ends before mutation.
        let contributions: Vec<(Var, Vec<f64>)> = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b, b_scalar } => vec![(*a, g.to_vec()), (*b, reduce_scalar(g, *b_scalar))],
            Op::Sub { a, b, b_scalar } => {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                vec![(*a, g.to_vec()), (*b, reduce_scalar(&neg, *b_scalar))]
            }
            Op::Mul { a, b, b_scalar } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let da: Vec<f64> = if *b_scalar {
                    g.iter().map(|x| x * bv[0]).collect()
                } else {
                    g.iter().zip(bv).map(|(x, y)| x * y).collect()
                };
                let db_full: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, reduce_scalar(&db_full, *b_scalar))]
            }
            Op::Scale { x, factor } => vec![(*x, g.iter().map(|v| v * factor).collect())],
            Op::Unary { x, kind } => {
                let xv = self.nodes[x.0].value.data();
                let yv = node.value.data();
                let dx = g.iter().zip(xv.iter().zip(yv)).map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi)).collect();
                vec![(*x, dx)]
            }
            Op::Custom { x, derivative } => {
                let xv = self.nodes[x.0].value.data();
                let dx = g.iter().zip(xv).map(|(gi, &xi)| gi * derivative(xi)).collect();
                vec![(*x, dx)]
            }
            Op::Matmul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let (ad, bd) = (av.data(), bv.data());
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = ad[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += a_ip * g[i * n + j];
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose { x } => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Softmax { x, axis, scale } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_blocks(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            dx[at(a)] = scale * y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::L2Normalize { x, axis, epsilon, norms } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_blocks(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let norm = norms[o * inner + i];
                        if norm > *epsilon {
                            let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                dx[at(a)] = (g[at(a)] - y[at(a)] * dot) / norm;
                            }
                        } else {
                            for a in 0..len {
                                dx[at(a)] = g[at(a)] / epsilon;
                            }
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::SpatialMeanPool { x } => {
                let s = self.nodes[x.0].value.shape();
                let (locations, c) = (s[0] * s[1], s[2]);
                let inv = 1.0 / locations as f64;
                let dx = (0..locations * c).map(|idx| g[idx % c] * inv).collect();
                vec![(*x, dx)]
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = self.nodes[p.0].value.len();
                        let slice = g[offset..offset + n].to_vec();
                        offset += n;
                        (*p, slice)
                    })
                    .collect()
            }
            Op::Reshape { x } => vec![(*x, g.to_vec())],
            Op::Permute { x, axes } => {
                let in_shape = self.nodes[x.0].value.shape();
                let mut dx = vec![0.0; g.len()];
                for (out_flat, in_flat) in permute_map(in_shape, axes).into_iter().enumerate() {
                    dx[in_flat] += g[out_flat];
                }
                vec![(*x, dx)]
            }
            Op::ExpandLast { x, copies } => {
                let dx = g.chunks(*copies).map(|c| c.iter().sum()).collect();
                vec![(*x, dx)]
            }
            Op::SelectLeading { x, index } => {
                let n = self.nodes[x.0].value.len();
                let block = g.len();
                let mut dx = vec![0.0; n];
                dx[index * block..(index + 1) * block].copy_from_slice(g);
                vec![(*x, dx)]
            }
            Op::AddBias { x, bias } => {
                let q = self.nodes[bias.0].value.len();
                let mut db = vec![0.0; q];
                for row in g.chunks(q) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_blocks(self.nodes[x.0].value.shape(), *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            dx[(o * len + a) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::SumAll { x } => vec![(*x, vec![g[0]; self.nodes[x.0].value.len()])],
            Op::GatherRows { x, rows } => {
                let s = self.nodes[x.0].value.shape();
                let width = s[1];
                let mut dx = vec![0.0; s[0] * width];
                for (out_row, &r) in rows.iter().enumerate() {
                    for j in 0..width {
                        dx[r * width + j] += g[out_row * width + j];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Cosine { u, v, epsilon } => {
                let uv = self.nodes[u.0].value.data();
                let vv = self.nodes[v.0].value.data();
                let c = node.value.data()[0];
                let nu = norm(uv);
                let nv = norm(vv);
                let du = cosine_partial(uv, vv, nu, nv, c, *epsilon, g[0]);
                let dv = cosine_partial(vv, uv, nv, nu, c, *epsilon, g[0]);
                vec![(*u, du), (*v, dv)]
            }
        };
        for (v, contribution) in contributions {
            self.accumulate(v, contribution);
        }
    }
}

fn reduce_scalar(g: &[f64], scalar: bool) -> Vec<f64> {
    if scalar {
        vec![g.iter().sum()]
    } else {
        g.to_vec()
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient of cos(x, y) = <x,y> / (max(|x|,ε) max(|y|,ε)) with respect to x.
fn cosine_partial(x: &[f64], y: &[f64], nx: f64, ny: f64, c: f64, eps: f64, g: f64) -> Vec<f64> {
    let dx_den = nx.max(eps);
    let dy_den = ny.max(eps);
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let mut d = yi / (dx_den * dy_den);
            if nx > eps {
                d -= c * xi / (nx * nx);
            }
            g * d
        })
        .collect()
}

/// For each flat index of the permuted output, the flat index of its source.
pub(crate) fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

impl Unary {
    /// dy/dx given the input and the already-computed output.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
            Unary::Square => 2.0 * x,
        }
    }
}
