//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its value and the information its
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse and
//! returns gradients for the leaves. A fresh tape is built per forward pass,
//! so graphs of varying size need no special handling.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Softplus(Var, f64),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Huber(Var, f64),
    SmoothL1(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    LseRows(Var),
    LseCols(Var),
    SoftmaxRows(Var, f64),
    RowNormalize(Var),
    LayerNorm(Var, f64),
    Concat(Vec<Var>, Axis),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, _) => Some(y),
        (_, 1) => Some(x),
        _ => None,
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

/// Index into `t` for output position `(i, j)` under broadcasting.
#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    r * t.cols() + c
}

/// Sums `g` down to `shape`, undoing a broadcast.
fn reduce_to(g: Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let k = bidx(&out, i, j);
            out.data_mut()[k] += g.get(i, j);
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus_unit(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Inverse of `softplus_unit`, for initializing softplus-parameterized scalars.
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input; gradients are tracked iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [r, c] = broadcast_shape(op, ta.shape(), tb.shape())?;
        let out = Tensor::from_fn(r, c, |i, j| {
            f(ta.data()[bidx(ta, i, j)], tb.data()[bidx(tb, i, j)])
        });
        Ok(self.push(out, make(a, b), &[a, b]))
    }

    /// Element-wise `a + b` with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// `(1/beta) * ln(1 + exp(beta * x))`.
    pub fn softplus(&mut self, a: Var, beta: f64) -> Var {
        let out = self.value(a).map(|x| softplus_unit(beta * x) / beta);
        self.push(out, Op::Softplus(a, beta), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Element-wise Huber penalty of a residual.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let out = self.value(a).map(|x| {
            if x.abs() <= delta {
                0.5 * x * x
            } else {
                delta * (x.abs() - 0.5 * delta)
            }
        });
        self.push(out, Op::Huber(a, delta), &[a])
    }

    /// Element-wise smooth-L1 penalty of a residual (quadratic below `beta`).
    pub fn smooth_l1(&mut self, a: Var, beta: f64) -> Var {
        let out = self.value(a).map(|x| {
            if x.abs() < beta {
                0.5 * x * x / beta
            } else {
                x.abs() - 0.5 * beta
            }
        });
        self.push(out, Op::SmoothL1(a, beta), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Sum over each row, giving a column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::column((0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect());
        self.push(out, Op::SumRows(a), &[a])
    }

    /// Sum over each column, giving a row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::row(
            (0..t.cols())
                .map(|j| (0..t.rows()).map(|i| t.get(i, j)).sum())
                .collect(),
        );
        self.push(out, Op::SumCols(a), &[a])
    }

    /// Row-wise log-sum-exp, giving a column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::column(
            (0..t.rows())
                .map(|i| lse(t.row_slice(i).iter().copied()))
                .collect(),
        );
        self.push(out, Op::LseRows(a), &[a])
    }

    /// Column-wise log-sum-exp, giving a row.
    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::row(
            (0..t.cols())
                .map(|j| lse((0..t.rows()).map(|i| t.get(i, j))))
                .collect(),
        );
        self.push(out, Op::LseCols(a), &[a])
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Var {
        let t = self.value(a);
        let mut out = t.map(|x| x / temperature);
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a, temperature), &[a])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= n);
        }
        self.push(out, Op::RowNormalize(a), &[a])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let (mu, s) = row_stats(row, eps);
            row.iter_mut().for_each(|x| *x = (*x - mu) / s);
        }
        self.push(out, Op::LayerNorm(a, eps), &[a])
    }

    /// Concatenates along `axis` (`Cols` stacks side by side).
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts
            .first()
            .map(|&p| self.shape(p))
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let out = match axis {
            Axis::Cols => {
                let rows = first[0];
                let mut cols = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s[0] != rows {
                        return Err(Error::Shape {
                            op: "concat",
                            lhs: first,
                            rhs: s,
                        });
                    }
                    cols += s[1];
                }
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            Axis::Rows => {
                let cols = first[1];
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(Error::Shape {
                            op: "concat",
                            lhs: first,
                            rhs: t.shape(),
                        });
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, cols, data)?
            }
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Output row `k` is input row `index[k]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::NodeOutOfRange {
                index: bad,
                len: t.rows(),
            });
        }
        let mut data = Vec::with_capacity(index.len() * t.cols());
        for &i in index {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(index.len(), t.cols(), data)?;
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), &[a]))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse pass from a `1x1` loss.
    ///
    /// Gradients are returned for leaves only; intermediate buffers are
    /// dropped as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                self.accumulate(grads, *b, reduce_to(g.clone(), sb));
                self.accumulate(grads, *a, reduce_to(g, sa));
            }
            Op::Sub(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                self.accumulate(grads, *b, reduce_to(g.map(|x| -x), sb));
                self.accumulate(grads, *a, reduce_to(g, sa));
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let div = matches!(node.op, Op::Div(..));
                if self.nodes[a.0].requires_grad {
                    let ga = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        let bv = tb.data()[bidx(tb, i, j)];
                        if div {
                            g.get(i, j) / bv
                        } else {
                            g.get(i, j) * bv
                        }
                    });
                    self.accumulate(grads, *a, reduce_to(ga, ta.shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        let av = ta.data()[bidx(ta, i, j)];
                        if div {
                            let bv = tb.data()[bidx(tb, i, j)];
                            -g.get(i, j) * av / (bv * bv)
                        } else {
                            g.get(i, j) * av
                        }
                    });
                    self.accumulate(grads, *b, reduce_to(gb, tb.shape()));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.shape(*a);
                let g = g.reshaped(shape[0], shape[1]).expect("same length");
                self.accumulate(grads, *a, g)
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let ga = g.matmul(&tb.transpose()).expect("shapes checked");
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = ta.transpose().matmul(&g).expect("shapes checked");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip_map(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Softplus(a, beta) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip_map(&g, x, |g, x| g * sigmoid(beta * x)));
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(&g, y, |g, y| g * y)),
            Op::Log(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip_map(&g, x, |g, x| g / x));
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(&g, y, |g, y| g * y * (1.0 - y))),
            Op::Huber(a, delta) => {
                let x = self.value(*a);
                let d = *delta;
                self.accumulate(
                    grads,
                    *a,
                    zip_map(&g, x, |g, x| if x.abs() <= d { g * x } else { g * d * x.signum() }),
                );
            }
            Op::SmoothL1(a, beta) => {
                let x = self.value(*a);
                let b = *beta;
                self.accumulate(
                    grads,
                    *a,
                    zip_map(&g, x, |g, x| if x.abs() < b { g * x / b } else { g * x.signum() }),
                );
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(r, c, g.item() / (r * c).max(1) as f64));
            }
            Op::SumRows(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::SumCols(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |_, j| g.get(0, j)));
            }
            Op::LseRows(a) => {
                let x = self.value(*a);
                let gx = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
                    g.get(i, 0) * (x.get(i, j) - y.get(i, 0)).exp()
                });
                self.accumulate(grads, *a, gx);
            }
            Op::LseCols(a) => {
                let x = self.value(*a);
                let gx = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
                    g.get(0, j) * (x.get(i, j) - y.get(0, j)).exp()
                });
                self.accumulate(grads, *a, gx);
            }
            Op::SoftmaxRows(a, temperature) => {
                let mut gx = g.clone();
                let cols = y.cols().max(1);
                for (i, row) in gx.data_mut().chunks_mut(cols).enumerate() {
                    let yr = y.row_slice(i);
                    let dot: f64 = row.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for (gv, yv) in row.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot) / temperature;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut gx = g.clone();
                let cols = y.cols().max(1);
                for (i, row) in gx.data_mut().chunks_mut(cols).enumerate() {
                    let yr = y.row_slice(i);
                    let n = x.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    let dot: f64 = row.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for (gv, yv) in row.iter_mut().zip(yr) {
                        *gv = (*gv - yv * dot) / n;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let mut gx = g.clone();
                let cols = y.cols().max(1);
                let n = cols as f64;
                for (i, row) in gx.data_mut().chunks_mut(cols).enumerate() {
                    let yr = y.row_slice(i);
                    let (_, s) = row_stats(x.row_slice(i), *eps);
                    let gmean = row.iter().sum::<f64>() / n;
                    let gy = row.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
                    for (gv, yv) in row.iter_mut().zip(yr) {
                        *gv = (*gv - gmean - yv * gy) / s;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    let gp = match axis {
                        Axis::Cols => Tensor::from_fn(r, c, |i, j| g.get(i, offset + j)),
                        Axis::Rows => Tensor::from_fn(r, c, |i, j| g.get(offset + i, j)),
                    };
                    offset += if *axis == Axis::Cols { c } else { r };
                    self.accumulate(grads, p, gp);
                }
            }
            Op::GatherRows(a, index) => {
                let [r, c] = self.shape(*a);
                let mut gx = Tensor::zeros(r, c);
                for (k, &src) in index.iter().enumerate() {
                    let dst = &mut gx.data_mut()[src * c..(src + 1) * c];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
        }
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len().max(1) as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    (mu, (var + eps).sqrt())
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(g.rows(), g.cols(), data).expect("same shape")
}
