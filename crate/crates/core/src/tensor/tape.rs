use std::collections::{BTreeMap, HashMap};

use super::{axis_split, gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding(Var, Vec<usize>),
    L2Norm(Var),
    Normalize(Var),
    Cosine(Var, Var),
    Select(Var, Vec<usize>),
    StopGrad,
    /// Elementwise function with a precomputed derivative.
    Pointwise {
        input: Var,
        name: &'static str,
        deriv: Vec<f64>,
    },
    /// Row-wise Householder map sending e₁ to each row of `mu`, applied to
    /// the matching row of the constant `frame`.
    Householder {
        mu: Var,
        frame: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Softplus(..) => "softplus",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Embedding(..) => "embedding",
            Op::L2Norm(..) => "l2_norm",
            Op::Normalize(..) => "normalize",
            Op::Cosine(..) => "cosine",
            Op::Select(..) => "select",
            Op::StopGrad => "stop_grad",
            Op::Pointwise { name, .. } => name,
            Op::Householder { .. } => "householder",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Leaf | Op::Param(_) | Op::StopGrad => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::Cosine(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Transpose(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Softplus(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::Embedding(a, _)
            | Op::L2Norm(a)
            | Op::Normalize(a)
            | Op::Select(a, _) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Pointwise { input, .. } => vec![*input],
            Op::Householder { mu, .. } => vec![*mu],
            Op::Concat(vs, _) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in creation order; [`Tape::backward`]
/// replays them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn leaf(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for t in self.params.values_mut().chain(self.leaves.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, op: &str) {
    assert_eq!(
        tape.value(a).shape(),
        tape.value(b).shape(),
        "{op}: shape mismatch"
    );
}

fn unary_map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().expect("rank-0 tensor")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match op {
            Op::Leaf | Op::Param(_) => true,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// A gradient-tracked input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records parameter `id` once per tape; frozen parameters become
    /// constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).clone();
        let v = if store.is_frozen(id) {
            self.push(value, Op::Constant)
        } else {
            self.push(value, Op::Param(id))
        };
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let shape = x.shape.clone();
        self.push(Tensor { shape, data }, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect();
        let shape = x.shape.clone();
        self.push(Tensor { shape, data }, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let shape = x.shape.clone();
        self.push(Tensor { shape, data }, Op::Mul(a, b))
    }

    /// Adds a `[n]` bias to every length-`n` row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let x = self.value(a);
        let b = self.value(bias);
        let n = last_dim(x);
        assert_eq!(b.numel(), n, "add_bias: bias length");
        let mut out = x.clone();
        for row in out.data.chunks_mut(n) {
            row.iter_mut().zip(&b.data).for_each(|(v, c)| *v += c);
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = unary_map(self.value(a), |v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = unary_map(self.value(a), |v| v + c);
        self.push(out, Op::AddConst(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = (x.rows(), x.cols());
        let (k2, n) = (y.rows(), y.cols());
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, &x.data, false, &y.data, false, 0.0, &mut data);
        self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x.data[i * n + j];
            }
        }
        self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Transpose(a),
        )
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), |v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = last_dim(x);
        let mut out = x.clone();
        for row in out.data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = last_dim(x);
        let mut out = x.clone();
        for row in out.data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    fn reduce_axis(&self, a: Var, axis: usize, mean: bool) -> Tensor {
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut shape = x.shape.clone();
        shape[axis] = 1;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x.data[(o * len + k) * inner..(o * len + k + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        if mean {
            data.iter_mut().for_each(|v| *v /= len as f64);
        }
        Tensor { shape, data }
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let out = self.reduce_axis(a, axis, false);
        self.push(out, Op::SumAxis(a, axis))
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let out = self.reduce_axis(a, axis, true);
        self.push(out, Op::MeanAxis(a, axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.value(parts[0]).shape().to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(s.len(), first.len(), "concat: rank mismatch");
            for (d, (x, y)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || x == y, "concat: shape {s:?} vs {first:?}");
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let x = self.value(p);
                let len = x.shape()[axis];
                data.extend_from_slice(&x.data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        self.push(Tensor { shape, data }, Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let (outer, full, inner) = axis_split(x.shape(), axis);
        assert!(start + len <= full, "slice {start}+{len} exceeds {full}");
        let mut shape = x.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data[base..base + len * inner]);
        }
        self.push(
            Tensor { shape, data },
            Op::Slice {
                input: a,
                axis,
                start,
            },
        )
    }

    /// Rows of a `[V, E]` table, one per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let (v, e) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v, "embedding id {id} >= {v}");
            data.extend_from_slice(t.row(id));
        }
        self.push(
            Tensor {
                shape: vec![ids.len(), e],
                data,
            },
            Op::Embedding(table, ids.to_vec()),
        )
    }

    /// Euclidean norm over the last axis (kept with size 1).
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = last_dim(x);
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = 1;
        let data = x
            .data
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(Tensor { shape, data }, Op::L2Norm(a))
    }

    /// Scales each last-axis vector to unit length.
    pub fn normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = last_dim(x);
        let mut out = x.clone();
        for row in out.data.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "normalize: zero vector");
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.push(out, Op::Normalize(a))
    }

    /// Cosine similarity between matching last-axis vectors.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "cosine");
        let (x, y) = (self.value(a), self.value(b));
        let n = last_dim(x);
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = 1;
        let data = x
            .data
            .chunks(n)
            .zip(y.data.chunks(n))
            .map(|(p, q)| {
                let dot: f64 = p.iter().zip(q).map(|(u, v)| u * v).sum();
                let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (np * nq)
            })
            .collect();
        self.push(Tensor { shape, data }, Op::Cosine(a, b))
    }

    /// Picks flat (row-major) positions into a `[k]` vector.
    pub fn select(&mut self, a: Var, flat: &[usize]) -> Var {
        let x = self.value(a);
        let data = flat.iter().map(|&i| x.data[i]).collect();
        self.push(
            Tensor {
                shape: vec![flat.len()],
                data,
            },
            Op::Select(a, flat.to_vec()),
        )
    }

    /// Same value, no gradient.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad)
    }

    /// Applies `f` elementwise; `f` returns the value and its derivative.
    pub fn pointwise(
        &mut self,
        a: Var,
        name: &'static str,
        f: impl Fn(f64) -> Result<(f64, f64)>,
    ) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(x.numel());
        let mut deriv = Vec::with_capacity(x.numel());
        for &v in &x.data {
            let (y, d) = f(v)?;
            data.push(y);
            deriv.push(d);
        }
        let shape = x.shape.clone();
        Ok(self.push(
            Tensor { shape, data },
            Op::Pointwise {
                input: a,
                name,
                deriv,
            },
        ))
    }

    /// Row-wise reflection taking e₁ onto each (unit) row of `mu`, applied to
    /// the matching row of `frame`. Gradient flows to `mu` only.
    pub fn householder(&mut self, mu: Var, frame: Tensor) -> Var {
        let m = self.value(mu);
        assert_eq!(m.shape(), frame.shape(), "householder: shape mismatch");
        let d = m.cols();
        let mut data = Vec::with_capacity(m.numel());
        for (mrow, xrow) in m.data.chunks(d).zip(frame.data.chunks(d)) {
            let u: Vec<f64> = (0..d)
                .map(|j| if j == 0 { 1.0 } else { 0.0 } - mrow[j])
                .collect();
            let s: f64 = u.iter().map(|v| v * v).sum();
            if s < 1e-24 {
                data.extend_from_slice(xrow);
                continue;
            }
            let p: f64 = u.iter().zip(xrow).map(|(a, b)| a * b).sum();
            data.extend(xrow.iter().zip(&u).map(|(x, uj)| x - 2.0 * p / s * uj));
        }
        let shape = m.shape.clone();
        self.push(Tensor { shape, data }, Op::Householder { mu, frame })
    }

    /// Reverse sweep from a scalar `loss`. Every parameter recorded on this
    /// tape gets an entry (zero when off the path), as does every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        for node in &self.nodes[..=loss.0] {
            if !node.value.is_finite() {
                return Err(Error::numeric(node.op.name(), "non-finite forward value"));
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut result = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(node.op.name(), "non-finite gradient"));
            }
            self.backprop_node(Var(i), node, g, &mut grads, &mut result)?;
        }

        for (&id, &v) in &self.params {
            if self.nodes[v.0].requires_grad {
                result
                    .params
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(self.value(v).shape()));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                result
                    .leaves
                    .entry(Var(i))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(result)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn backprop_node(
        &self,
        this: Var,
        node: &Node,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        result: &mut Gradients,
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::StopGrad => {}
            Op::Leaf => {
                result
                    .leaves
                    .insert(this, Tensor::new(out.shape().to_vec(), g)?);
            }
            Op::Param(id) => {
                result
                    .params
                    .insert(*id, Tensor::new(out.shape().to_vec(), g)?);
            }
            Op::Add(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), yi) in s.iter_mut().zip(&g).zip(&y.data) {
                        *d += gi * yi;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((d, gi), xi) in s.iter_mut().zip(&g).zip(&x.data) {
                        *d += gi * xi;
                    }
                }
            }
            Op::AddBias(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                let n = val(*b).numel();
                if let Some(s) = self.slot(grads, *b) {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += c * x);
                }
            }
            Op::AddConst(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
            }
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if let Some(s) = self.slot(grads, *a) {
                    // dA = G Bᵀ
                    gemm(m, n, k, &g, false, &y.data, true, 1.0, s);
                }
                if let Some(s) = self.slot(grads, *b) {
                    // dB = Aᵀ G
                    gemm(k, m, n, &x.data, true, &g, false, 1.0, s);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), o) in s.iter_mut().zip(&g).zip(&out.data) {
                        *d += gi * o;
                    }
                }
            }
            Op::Log(a) => {
                let x = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), xi) in s.iter_mut().zip(&g).zip(&x.data) {
                        *d += gi / xi;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), o) in s.iter_mut().zip(&g).zip(&out.data) {
                        *d += gi * (1.0 - o * o);
                    }
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), xi) in s.iter_mut().zip(&g).zip(&x.data) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Abs(a) => {
                let x = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), xi) in s.iter_mut().zip(&g).zip(&x.data) {
                        if *xi > 0.0 {
                            *d += gi;
                        } else if *xi < 0.0 {
                            *d -= gi;
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                let x = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), xi) in s.iter_mut().zip(&g).zip(&x.data) {
                        *d += gi * sigmoid(*xi);
                    }
                }
            }
            Op::Softmax(a) => {
                let n = last_dim(out);
                if let Some(s) = self.slot(grads, *a) {
                    for ((srow, grow), orow) in
                        s.chunks_mut(n).zip(g.chunks(n)).zip(out.data.chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(orow).map(|(p, q)| p * q).sum();
                        for ((d, gi), o) in srow.iter_mut().zip(grow).zip(orow) {
                            *d += o * (gi - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = last_dim(out);
                if let Some(s) = self.slot(grads, *a) {
                    for ((srow, grow), orow) in
                        s.chunks_mut(n).zip(g.chunks(n)).zip(out.data.chunks(n))
                    {
                        let total: f64 = grow.iter().sum();
                        for ((d, gi), o) in srow.iter_mut().zip(grow).zip(orow) {
                            *d += gi - o.exp() * total;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
                let factor = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                if let Some(s) = self.slot(grads, *a) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for k in 0..len {
                            let dst = &mut s[(o * len + k) * inner..(o * len + k + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, x)| *d += factor * x);
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if let Some(s) = self.slot(grads, p) {
                        for o in 0..outer {
                            let src = &g
                                [(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut s[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, x)| *d += x);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, full, inner) = axis_split(val(*input).shape(), *axis);
                let len = out.shape()[*axis];
                if let Some(s) = self.slot(grads, *input) {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        let dst = &mut s[base..base + len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let e = val(*table).cols();
                if let Some(s) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut s[id * e..(id + 1) * e];
                        dst.iter_mut()
                            .zip(&g[r * e..(r + 1) * e])
                            .for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::L2Norm(a) => {
                let x = val(*a);
                let n = last_dim(x);
                if let Some(s) = self.slot(grads, *a) {
                    for (r, (srow, xrow)) in s.chunks_mut(n).zip(x.data.chunks(n)).enumerate() {
                        let norm = out.data[r];
                        if norm > 0.0 {
                            for (d, xi) in srow.iter_mut().zip(xrow) {
                                *d += g[r] * xi / norm;
                            }
                        }
                    }
                }
            }
            Op::Normalize(a) => {
                let x = val(*a);
                let n = last_dim(x);
                if let Some(s) = self.slot(grads, *a) {
                    for (r, srow) in s.chunks_mut(n).enumerate() {
                        let xrow = &x.data[r * n..(r + 1) * n];
                        let yrow = &out.data[r * n..(r + 1) * n];
                        let grow = &g[r * n..(r + 1) * n];
                        let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for ((d, gi), yi) in srow.iter_mut().zip(grow).zip(yrow) {
                            *d += (gi - yi * dot) / norm;
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let n = last_dim(x);
                let rows = x.numel() / n;
                let mut ga = vec![0.0; x.numel()];
                let mut gb = vec![0.0; y.numel()];
                for r in 0..rows {
                    let p = &x.data[r * n..(r + 1) * n];
                    let q = &y.data[r * n..(r + 1) * n];
                    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let c = out.data[r];
                    for j in 0..n {
                        ga[r * n + j] = g[r] * (q[j] / (np * nq) - c * p[j] / (np * np));
                        gb[r * n + j] = g[r] * (p[j] / (np * nq) - c * q[j] / (nq * nq));
                    }
                }
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(&ga).for_each(|(d, x)| *d += x);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(&gb).for_each(|(d, x)| *d += x);
                }
            }
            Op::Select(a, flat) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (k, &i) in flat.iter().enumerate() {
                        s[i] += g[k];
                    }
                }
            }
            Op::Pointwise { input, deriv, .. } => {
                if let Some(s) = self.slot(grads, *input) {
                    for ((d, gi), di) in s.iter_mut().zip(&g).zip(deriv) {
                        *d += gi * di;
                    }
                }
            }
            Op::Householder { mu, frame } => {
                let m = val(*mu);
                let d = m.cols();
                if let Some(s) = self.slot(grads, *mu) {
                    for (r, srow) in s.chunks_mut(d).enumerate() {
                        let mrow = &m.data[r * d..(r + 1) * d];
                        let xrow = &frame.data[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let u: Vec<f64> = (0..d)
                            .map(|j| if j == 0 { 1.0 } else { 0.0 } - mrow[j])
                            .collect();
                        let ss: f64 = u.iter().map(|v| v * v).sum();
                        if ss < 1e-24 {
                            continue;
                        }
                        let p: f64 = u.iter().zip(xrow).map(|(a, b)| a * b).sum();
                        let gu: f64 = u.iter().zip(grow).map(|(a, b)| a * b).sum();
                        // y = x - 2 p u / s with u = e1 - mu; dmu = -du.
                        for j in 0..d {
                            let du = -2.0 / ss * (gu * xrow[j] + p * grow[j])
                                + 4.0 * p * gu / (ss * ss) * u[j];
                            srow[j] -= du;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
