//! Matrix-valued Wengert tape.
//!
//! Every node holds a dense row-major `[rows x cols]` value. Batches run along
//! rows. The tape is append-only; `backward` walks it once in reverse.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Variable,
    /// Trainable tensor of a bound network.
    Param,
    /// `x W^T + b`, with `W` stored `[out x in]` and `b` as `[1 x out]`.
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    MulRow(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    /// `x * scale + shift` with constant per-column `scale`.
    AffineConst {
        x: NodeId,
        scale: Array1<f64>,
    },
    Concat(NodeId, NodeId),
    Slice(NodeId, usize, usize),
    /// Row-wise stacking of the listed nodes.
    VStack(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    RowSum(NodeId),
    RowDot(NodeId, NodeId),
    Mean(NodeId),
    /// Normalization over rows (per feature); `inv_std` has one entry per column.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat,
        inv_std: Array1<f64>,
    },
    /// Normalization over columns (per sample); `inv_std` has one entry per row.
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat,
        inv_std: Array1<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// One network whose trainable tensors were placed on the tape.
#[derive(Debug, Clone)]
pub(crate) struct Binding {
    pub(crate) id: u64,
    pub(crate) version: u64,
    pub(crate) nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    pub(crate) bindings: Vec<Binding>,
}

/// Per-node adjoints produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Adjoints {
    grads: Vec<Option<Mat>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::config(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Smallest distance from any ReLU or clamp input on the tape to its
    /// breakpoint; infinite when the tape has none.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            let (input, points): (NodeId, Vec<f64>) = match node.op {
                Op::Relu(a) => (a, vec![0.0]),
                Op::Clamp(a, lo, hi) => (a, vec![lo, hi]),
                _ => continue,
            };
            for &x in self.value(input) {
                for &p in &points {
                    margin = margin.min((x - p).abs());
                }
            }
        }
        margin
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Value of a `[1 x 1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose adjoint is reported by `backward` (e.g. critic actions).
    pub fn variable(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    pub(crate) fn param(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Param, true)
    }

    pub(crate) fn find_binding(&self, id: u64) -> Option<usize> {
        self.bindings.iter().position(|b| b.id == id)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ncols() != wv.ncols() {
            return Err(Error::config(format!(
                "linear: input width {} but weight expects {}",
                xv.ncols(),
                wv.ncols()
            )));
        }
        let mut out = xv.dot(&wv.t());
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.dim() != (1, out.ncols()) {
                return Err(Error::config("linear: bias shape mismatch"));
            }
            out += bv;
        }
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) + k;
        let ng = self.ng(a);
        self.push(v, Op::Offset(a), ng)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(a).mapv(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.nrows() != bv.nrows() {
            return Err(Error::config(format!(
                "concat: row mismatch {} vs {}",
                av.nrows(),
                bv.nrows()
            )));
        }
        let v = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .expect("rows checked above");
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Concat(a, b), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start > end || end > av.ncols() {
            return Err(Error::config(format!(
                "slice: columns {start}..{end} out of {}",
                av.ncols()
            )));
        }
        let v = av.slice(ndarray::s![.., start..end]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(v, Op::Slice(a, start, end), ng))
    }

    /// Row-wise stacking; every part must have the same width.
    pub fn vstack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return Err(Error::config("vstack: nothing to stack"));
        };
        let cols = self.value(*first).ncols();
        if parts.iter().any(|p| self.value(*p).ncols() != cols) {
            return Err(Error::config("vstack: column mismatch"));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("columns checked above");
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(v, Op::VStack(parts.to_vec()), ng))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start > end || end > av.nrows() {
            return Err(Error::config(format!(
                "slice: rows {start}..{end} out of {}",
                av.nrows()
            )));
        }
        let v = av.slice(ndarray::s![start..end, ..]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(v, Op::SliceRows(a, start, end), ng))
    }

    /// `[B x d] -> [B x 1]`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::RowSum(a), ng)
    }

    /// Per-row inner product, `[B x d] . [B x d] -> [B x 1]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "row_dot")?;
        let v = (self.value(a) * self.value(b))
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::RowDot(a, b), ng))
    }

    /// Mean over every entry, as a `[1 x 1]` node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = if av.is_empty() {
            0.0
        } else {
            av.sum() / av.len() as f64
        };
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), ng)
    }

    /// Batch normalization with batch statistics. Returns the node and the
    /// per-feature `(mean, biased variance)` used.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Array1<f64>, Array1<f64>)> {
        let xv = self.value(x);
        let n = xv.nrows();
        if n < 2 {
            return Err(Error::config(format!(
                "batch_norm in train mode needs at least 2 rows, got {n}"
            )));
        }
        let mean = xv.mean_axis(Axis(0)).expect("non-empty");
        let centered = xv - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let out = self.affine(&xhat, gamma, beta)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        );
        Ok((id, mean, var))
    }

    /// Batch normalization with fixed statistics (eval mode).
    pub fn batch_norm_fixed(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        eps: f64,
    ) -> Result<NodeId> {
        if self.value(x).ncols() != mean.len() || mean.len() != var.len() {
            return Err(Error::config("batch_norm: feature count mismatch"));
        }
        let scale = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let shift = -(mean * &scale);
        let xv = self.value(x);
        let v = xv * &scale + &shift;
        let ng = self.ng(x);
        let xhat = self.push(v, Op::AffineConst { x, scale }, ng);
        let scaled = self.mul_row(xhat, gamma)?;
        self.add_row(scaled, beta)
    }

    /// `x * row`, with `row` a `[1 x d]` node broadcast down the rows of `x`.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        if self.value(row).dim() != (1, self.value(x).ncols()) {
            return Err(Error::config("mul_row: operand must be [1 x cols]"));
        }
        let v = self.value(x) * self.value(row);
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(v, Op::MulRow(x, row), ng))
    }

    /// `x + row`, with `row` a `[1 x d]` node broadcast down the rows of `x`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        if self.value(row).dim() != (1, self.value(x).ncols()) {
            return Err(Error::config("add_row: operand must be [1 x cols]"));
        }
        let v = self.value(x) + self.value(row);
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(v, Op::AddRow(x, row), ng))
    }

    fn affine(&self, xhat: &Mat, gamma: NodeId, beta: NodeId) -> Result<Mat> {
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.dim() != (1, xhat.ncols()) || b.dim() != (1, xhat.ncols()) {
            return Err(Error::config("normalization affine shape mismatch"));
        }
        Ok(xhat * g + b)
    }

    /// Layer normalization over each row.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let out = self.affine(&xhat, gamma, beta)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Reverse pass from a `[1 x 1]` node.
    pub fn backward(&self, loss: NodeId) -> Result<Adjoints> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::config("backward: loss node must be 1x1"));
        }
        self.backward_with(loss, Array2::ones((1, 1)))
    }

    /// Reverse pass seeded with an arbitrary upstream adjoint for `out`.
    pub fn backward_with(&self, out: NodeId, upstream: Mat) -> Result<Adjoints> {
        same_shape(self.value(out), &upstream, "backward upstream")?;
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(upstream);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |id: NodeId, delta: Mat| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::Linear { x, w, b } => {
                if self.ng(*x) {
                    acc(*x, g.dot(self.value(*w)));
                }
                if self.ng(*w) {
                    acc(*w, g.t().dot(self.value(*x)));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.ng(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= sigmoid(x));
                acc(*a, d);
            }
            Op::Square(a) => acc(*a, g * self.value(*a) * 2.0),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| if x < *lo || x > *hi { *d = 0.0 });
                acc(*a, d);
            }
            Op::MulRow(x, row) => {
                if self.ng(*x) {
                    acc(*x, g * self.value(*row));
                }
                if self.ng(*row) {
                    acc(*row, (g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                if self.ng(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AffineConst { x, scale } => acc(*x, g * scale),
            Op::Concat(a, b) => {
                let split = self.value(*a).ncols();
                acc(*a, g.slice(ndarray::s![.., ..split]).to_owned());
                acc(*b, g.slice(ndarray::s![.., split..]).to_owned());
            }
            Op::Slice(a, start, end) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(ndarray::s![.., *start..*end]).assign(g);
                    acc(*a, d);
                }
            }
            Op::VStack(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).nrows();
                    acc(*p, g.slice(ndarray::s![start..start + rows, ..]).to_owned());
                    start += rows;
                }
            }
            Op::SliceRows(a, start, end) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(ndarray::s![*start..*end, ..]).assign(g);
                    acc(*a, d);
                }
            }
            Op::RowSum(a) => {
                let cols = self.value(*a).ncols();
                let d = g.broadcast((g.nrows(), cols)).expect("[B x 1]").to_owned();
                acc(*a, d);
            }
            Op::RowDot(a, b) => {
                if self.ng(*a) {
                    acc(*a, self.value(*b) * g);
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a) * g);
                }
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = av.len().max(1) as f64;
                acc(*a, Array2::from_elem(av.dim(), g[[0, 0]] / n));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                if self.ng(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), column-wise
                    let dxhat = g * gv;
                    let m1 = dxhat.mean_axis(Axis(0)).expect("rows >= 2");
                    let m2 = (&dxhat * xhat).mean_axis(Axis(0)).expect("rows >= 2");
                    let dx = (dxhat - &m1 - xhat * &m2) * inv_std;
                    acc(*x, dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                if self.ng(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let dxhat = g * gv;
                    let d = xhat.ncols() as f64;
                    let m1 = (dxhat.sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                    let m2 = ((&dxhat * xhat).sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                    let dx = (dxhat - &m1 - xhat * &m2) * &inv_std.view().insert_axis(Axis(1));
                    acc(*x, dx);
                }
            }
        }
    }
}
