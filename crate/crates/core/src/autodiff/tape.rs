//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede
//! it and a single reverse sweep visits each node once. Values are
//! immutable after they are written.

use rand::Rng;

use super::matrix::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction direction.
///
/// `Row` reduces within each row (an `r x c` input gives `r x 1`); `Col`
/// reduces within each column (`1 x c`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

/// Shape of the right-hand operand of a broadcasting op.
///
/// `Row` is a `1 x c` vector applied to every row, `Col` an `r x 1`
/// vector applied to every column, `Scalar` a `1 x 1` value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Row,
    Col,
    Scalar,
}

/// Local backward rule for [`Tape::custom`]: `(inputs, output, upstream) -> input grads`.
pub type BackwardFn = Box<dyn Fn(&[&Matrix], &Matrix, &Matrix) -> Vec<Matrix>>;

/// Per-column statistics of a batch-normalized input.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddBroadcast(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId),
    MulBroadcast(NodeId, NodeId, Broadcast),
    Scale(NodeId, f64),
    Shift(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Softmax(NodeId, Axis),
    LogSumExp(NodeId, Axis),
    Sum(NodeId, Axis),
    SumAll(NodeId),
    /// Flat input index of the selected entry for every output entry.
    Select(NodeId, Vec<usize>, &'static str),
    Clip(NodeId, f64, f64),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Reshape(NodeId),
    Dropout(NodeId, Vec<f64>),
    BatchNorm(NodeId, Vec<f64>),
    SumRowGroups(NodeId, usize),
    Custom {
        name: &'static str,
        inputs: Vec<NodeId>,
        backward: BackwardFn,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Mul(..) => "mul",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Softmax(..) => "softmax",
            Op::LogSumExp(..) => "logsumexp",
            Op::Sum(..) => "sum",
            Op::SumAll(_) => "sum_all",
            Op::Select(_, _, name) => name,
            Op::Clip(..) => "clip",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::Dropout(..) => "dropout",
            Op::BatchNorm(..) => "batchnorm",
            Op::SumRowGroups(..) => "sum_row_groups",
            Op::Custom { name, .. } => name,
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every node that requires one.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when the root does not depend on it.
    pub fn wrt(&self, id: NodeId, like: &Matrix) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    /// Names of the recorded ops in evaluation order, leaves excluded.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.op.name())
            .collect()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Matrix, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let value = matmul(va, vb);
        Ok(self.push_op(Op::MatMul(a, b), value, &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push_op(Op::Transpose(a), value, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_op(Op::Sub(a, b), value, &[a, b]))
    }

    fn check_broadcast(&self, op: &'static str, a: NodeId, b: NodeId, how: Broadcast) -> Result<()> {
        let (r, c) = self.shape(a);
        let want = match how {
            Broadcast::Row => (1, c),
            Broadcast::Col => (r, 1),
            Broadcast::Scalar => (1, 1),
        };
        if self.shape(b) != want {
            return Err(Error::shape(
                op,
                format!("{how:?} operand {:?} for input {:?}", self.shape(b), (r, c)),
            ));
        }
        Ok(())
    }

    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId, how: Broadcast) -> Result<NodeId> {
        self.check_broadcast("add_broadcast", a, b, how)?;
        let value = broadcast_apply(self.value(a), self.value(b), how, |x, y| x + y);
        Ok(self.push_op(Op::AddBroadcast(a, b, how), value, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(Op::Mul(a, b), value, &[a, b]))
    }

    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId, how: Broadcast) -> Result<NodeId> {
        self.check_broadcast("mul_broadcast", a, b, how)?;
        let value = broadcast_apply(self.value(a), self.value(b), how, |x, y| x * y);
        Ok(self.push_op(Op::MulBroadcast(a, b, how), value, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).map(|x| x * factor);
        self.push_op(Op::Scale(a, factor), value, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, shift: f64) -> NodeId {
        let value = self.value(a).map(|x| x + shift);
        self.push_op(Op::Shift(a), value, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push_op(Op::Relu(a), value, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push_op(Op::Sigmoid(a), value, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::ln);
        self.push_op(Op::Log(a), value, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::exp);
        self.push_op(Op::Exp(a), value, &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        let value = softmax_axis(self.value(a), axis)?;
        Ok(self.push_op(Op::Softmax(a, axis), value, &[a]))
    }

    pub fn logsumexp(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        let value = logsumexp_axis(self.value(a), axis)?;
        Ok(self.push_op(Op::LogSumExp(a, axis), value, &[a]))
    }

    pub fn sum(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let v = self.value(a);
        let value = match axis {
            Axis::Row => {
                let sums: Vec<f64> = v.row_iter().map(|r| r.iter().sum()).collect();
                Matrix::from_vec(v.rows(), 1, sums).expect("row sums")
            }
            Axis::Col => column_sums(v),
        };
        self.push_op(Op::Sum(a, axis), value, &[a])
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        self.push_op(Op::SumAll(a), value, &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Minimum along `axis`; ties resolve to the lowest index.
    pub fn min(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.select(a, axis, "min", |cand, best| cand < best)
    }

    /// Maximum along `axis`; ties resolve to the lowest index.
    pub fn max(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.select(a, axis, "max", |cand, best| cand > best)
    }

    fn select(
        &mut self,
        a: NodeId,
        axis: Axis,
        name: &'static str,
        better: impl Fn(f64, f64) -> bool,
    ) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = v.shape();
        let (outer, inner, out_shape) = match axis {
            Axis::Row => (r, c, (r, 1)),
            Axis::Col => (c, r, (1, c)),
        };
        if inner == 0 {
            return Err(Error::EmptyReduction { op: name });
        }
        let flat = |o: usize, k: usize| match axis {
            Axis::Row => o * c + k,
            Axis::Col => k * c + o,
        };
        let mut picks = Vec::with_capacity(outer);
        let mut vals = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = flat(o, 0);
            for k in 1..inner {
                let idx = flat(o, k);
                if better(v.data()[idx], v.data()[best]) {
                    best = idx;
                }
            }
            picks.push(best);
            vals.push(v.data()[best]);
        }
        let value = Matrix::from_vec(out_shape.0, out_shape.1, vals)?;
        Ok(self.push_op(Op::Select(a, picks, name), value, &[a]))
    }

    /// Clamps entries to `[lo, hi]`; clamped entries pass no gradient.
    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(Op::Clip(a, lo, hi), value, &[a])
    }

    /// Stacks inputs vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&values)?;
        Ok(self.push_op(Op::ConcatRows(parts.to_vec()), value, parts))
    }

    /// Joins inputs side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::shape("concat_cols", format!("{r} rows, expected {rows}")));
            }
            cols += c;
        }
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push_op(Op::ConcatCols(parts.to_vec()), value, parts))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start + len > v.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, v.rows()),
            ));
        }
        let value = v.slice_rows(start, len);
        Ok(self.push_op(Op::SliceRows(a, start), value, &[a]))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {}", start + len, v.cols()),
            ));
        }
        let mut value = Matrix::zeros(v.rows(), len);
        for i in 0..v.rows() {
            value.row_mut(i).copy_from_slice(&v.row(i)[start..start + len]);
        }
        Ok(self.push_op(Op::SliceCols(a, start), value, &[a]))
    }

    /// Row-major reinterpretation with the same number of entries.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let value = self.value(a).reshape(rows, cols)?;
        Ok(self.push_op(Op::Reshape(a), value, &[a]))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let v = self.value(a);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Matrix::from_vec(v.rows(), v.cols(), data)?;
        Ok(self.push_op(Op::Dropout(a, mask), value, &[a]))
    }

    /// Normalizes each column by its batch mean and biased variance.
    pub fn batchnorm(&mut self, a: NodeId, eps: f64) -> Result<(NodeId, BatchStats)> {
        let v = self.value(a);
        let (r, c) = v.shape();
        if r == 0 {
            return Err(Error::EmptyReduction { op: "batchnorm" });
        }
        let n = r as f64;
        let mean: Vec<f64> = column_sums(v).data().iter().map(|s| s / n).collect();
        let mut var = vec![0.0; c];
        for row in v.row_iter() {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut value = v.clone();
        for i in 0..r {
            for (j, x) in value.row_mut(i).iter_mut().enumerate() {
                *x = (*x - mean[j]) * inv_std[j];
            }
        }
        let id = self.push_op(Op::BatchNorm(a, inv_std), value, &[a]);
        Ok((id, BatchStats { mean, var }))
    }

    /// Sums consecutive blocks of `group` rows: `(b * group) x c` becomes `b x c`.
    ///
    /// Each block is accumulated in sorted order, so the result does not
    /// depend on the order of rows within a block.
    pub fn sum_row_groups(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = v.shape();
        if group == 0 || r % group != 0 {
            return Err(Error::shape(
                "sum_row_groups",
                format!("{r} rows do not split into groups of {group}"),
            ));
        }
        let blocks = r / group;
        let mut value = Matrix::zeros(blocks, c);
        let mut scratch = vec![0.0; group];
        for b in 0..blocks {
            for j in 0..c {
                for (k, s) in scratch.iter_mut().enumerate() {
                    *s = v.get(b * group + k, j);
                }
                scratch.sort_unstable_by(f64::total_cmp);
                value.set(b, j, scratch.iter().sum());
            }
        }
        Ok(self.push_op(Op::SumRowGroups(a, group), value, &[a]))
    }

    /// Records an op with a caller-supplied value and local backward rule.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[NodeId],
        value: Matrix,
        backward: BackwardFn,
    ) -> NodeId {
        self.push_op(
            Op::Custom {
                name,
                inputs: inputs.to_vec(),
                backward,
            },
            value,
            inputs,
        )
    }

    /// First node (in evaluation order) whose value has a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(NodeId, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (NodeId(i), n.op.name()))
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        let mut acc = |id: NodeId, m: Matrix| accumulate(grads, id, m);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, matmul_nt(g, self.value(*b)));
                }
                if self.needs(*b) {
                    acc(*b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::AddBroadcast(a, b, how) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, reduce_to(g, *how));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::MulBroadcast(a, b, how) => {
                if self.needs(*a) {
                    acc(*a, broadcast_apply(g, self.value(*b), *how, |x, y| x * y));
                }
                if self.needs(*b) {
                    let prod = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(*b, reduce_to(&prod, *how));
                }
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::Shift(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip_map(out, |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |x, y| x * y * (1.0 - y))),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Exp(a) => acc(*a, g.zip_map(out, |x, y| x * y)),
            Op::Softmax(a, axis) => acc(*a, softmax_backward(out, g, *axis)),
            Op::LogSumExp(a, axis) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        let k = match axis {
                            Axis::Row => i,
                            Axis::Col => j,
                        };
                        let weight = (x.get(i, j) - out.data()[k]).exp();
                        d.set(i, j, g.data()[k] * weight);
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a, axis) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let k = match axis {
                            Axis::Row => i,
                            Axis::Col => j,
                        };
                        d.set(i, j, g.data()[k]);
                    }
                }
                acc(*a, d);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Select(a, picks, _) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for (k, &idx) in picks.iter().enumerate() {
                    d.data_mut()[idx] += g.data()[k];
                }
                acc(*a, d);
            }
            Op::Clip(a, lo, hi) => {
                let x = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                acc(*a, g.zip_map(x, |gv, xv| if xv < lo || xv > hi { 0.0 } else { gv }));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.needs(p) {
                        acc(p, g.slice_rows(start, rows));
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.needs(p) {
                        let mut d = Matrix::zeros(r, c);
                        for i in 0..r {
                            d.row_mut(i).copy_from_slice(&g.row(i)[start..start + c]);
                        }
                        acc(p, d);
                    }
                    start += c;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, g.reshape(r, c).expect("reshape back"));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), data).expect("mask shape"));
            }
            Op::BatchNorm(a, inv_std) => {
                let (r, c) = out.shape();
                let n = r as f64;
                let sum_g = column_sums(g);
                let sum_gx = column_sums(&g.zip_map(out, |x, y| x * y));
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let v = inv_std[j] / n
                            * (n * g.get(i, j) - sum_g.data()[j] - out.get(i, j) * sum_gx.data()[j]);
                        d.set(i, j, v);
                    }
                }
                acc(*a, d);
            }
            Op::SumRowGroups(a, group) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.row(i / group));
                }
                acc(*a, d);
            }
            Op::Custom {
                inputs, backward, ..
            } => {
                let values: Vec<&Matrix> = inputs.iter().map(|&i| self.value(i)).collect();
                let local = backward(&values, out, g);
                for (&id, d) in inputs.iter().zip(local) {
                    if self.needs(id) {
                        acc(id, d);
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, m: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

fn broadcast_apply(a: &Matrix, b: &Matrix, how: Broadcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (r, c) = a.shape();
    let mut out = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let bv = match how {
                Broadcast::Row => b.data()[j],
                Broadcast::Col => b.data()[i],
                Broadcast::Scalar => b.data()[0],
            };
            out.set(i, j, f(a.get(i, j), bv));
        }
    }
    out
}

fn reduce_to(g: &Matrix, how: Broadcast) -> Matrix {
    match how {
        Broadcast::Row => column_sums(g),
        Broadcast::Col => {
            let sums: Vec<f64> = g.row_iter().map(|r| r.iter().sum()).collect();
            Matrix::from_vec(g.rows(), 1, sums).expect("row sums")
        }
        Broadcast::Scalar => Matrix::scalar(g.sum()),
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Matrix::row_vector(&out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lanes(m: &Matrix, axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Row => (m.rows(), m.cols()),
        Axis::Col => (m.cols(), m.rows()),
    }
}

fn flat_index(m: &Matrix, axis: Axis, outer: usize, inner: usize) -> usize {
    match axis {
        Axis::Row => outer * m.cols() + inner,
        Axis::Col => inner * m.cols() + outer,
    }
}

/// Stable `log sum exp` along `axis`: `max + log sum exp(x - max)`.
pub fn logsumexp_axis(m: &Matrix, axis: Axis) -> Result<Matrix> {
    let (outer, inner) = lanes(m, axis);
    if inner == 0 {
        return Err(Error::EmptyReduction { op: "logsumexp" });
    }
    let mut out = Vec::with_capacity(outer);
    for o in 0..outer {
        let at = |k| m.data()[flat_index(m, axis, o, k)];
        let max = (0..inner).map(at).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            out.push(f64::NEG_INFINITY);
            continue;
        }
        let s: f64 = (0..inner).map(|k| (at(k) - max).exp()).sum();
        out.push(max + s.ln());
    }
    match axis {
        Axis::Row => Matrix::from_vec(outer, 1, out),
        Axis::Col => Matrix::from_vec(1, outer, out),
    }
}

/// Softmax along `axis`.
pub fn softmax_axis(m: &Matrix, axis: Axis) -> Result<Matrix> {
    let (outer, inner) = lanes(m, axis);
    if inner == 0 && outer > 0 {
        return Err(Error::EmptyReduction { op: "softmax" });
    }
    let mut out = m.clone();
    for o in 0..outer {
        let idx = |k| flat_index(m, axis, o, k);
        let max = (0..inner).map(|k| m.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..inner {
            let e = (m.data()[idx(k)] - max).exp();
            out.data_mut()[idx(k)] = e;
            total += e;
        }
        for k in 0..inner {
            out.data_mut()[idx(k)] /= total;
        }
    }
    Ok(out)
}

fn softmax_backward(y: &Matrix, g: &Matrix, axis: Axis) -> Matrix {
    let (outer, inner) = lanes(y, axis);
    let mut d = Matrix::zeros(y.rows(), y.cols());
    for o in 0..outer {
        let idx = |k| flat_index(y, axis, o, k);
        let dotp: f64 = (0..inner).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
        for k in 0..inner {
            let i = idx(k);
            d.data_mut()[i] = y.data()[i] * (g.data()[i] - dotp);
        }
    }
    d
}
