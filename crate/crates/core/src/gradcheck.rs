//! Central finite-difference checks of tape gradients.
//!
//! Every check rebuilds its graph from perturbed leaf values and compares
//! `(f(x + h) - f(x - h)) / 2h` with the reverse sweep. Entries sitting
//! within `h` of a kink (relu at zero, min/max ties, clip bounds) are
//! excused when the two one-sided differences disagree and the analytic
//! value matches one of them.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Axis, Broadcast, Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::losses::{batch_loss_node, loss_node, LossKind, Reduce, DEFAULT_EPSILON};
use crate::nets::{
    AutoencoderConfig, Forward, LatentMode, Mode, ParamId, RuleNet, RuleNetConfig, SegmentPlan, SetAutoencoder,
    SetModel,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    /// Absolute differences below this always pass.
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { step: 1e-5, rel: 1e-4, abs_floor: 1e-7 }
    }
}

impl Tolerance {
    fn agrees(&self, a: f64, b: f64) -> bool {
        let diff = (a - b).abs();
        diff <= self.abs_floor || diff <= self.rel * a.abs().max(b.abs())
    }
}

/// Agreement up to the `O(h)` truncation error of one-sided differences.
fn roughly(a: f64, b: f64, h: f64) -> bool {
    (a - b).abs() <= 10.0 * h * a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub leaf: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Ops recorded by the checked graph.
    pub ops: Vec<&'static str>,
    pub compared: usize,
    pub excused: usize,
    /// Largest relative error among entries above the absolute floor.
    pub worst: f64,
    pub worst_abs: f64,
    pub mismatches: Vec<Mismatch>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.compared > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} entries, {} excused, worst abs err {:.1e}, worst rel err above floor {:.1e}",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.compared,
            self.excused,
            self.worst_abs,
            self.worst
        )?;
        if !self.mismatches.is_empty() {
            write!(f, "\n    ops: {}", self.ops.join(" "))?;
        }
        for m in &self.mismatches {
            write!(
                f,
                "\n    leaf {} [{}, {}]: analytic {:.9e} numeric {:.9e}",
                m.leaf, m.row, m.col, m.analytic, m.numeric
            )?;
        }
        Ok(())
    }
}

/// Scalar function of a list of leaf matrices.
type Objective<'a> = dyn FnMut(&[Matrix]) -> Result<f64> + 'a;

/// Compares `analytic` with central differences of `f` at `points`, a list
/// of `(leaf, row, col)` entries.
fn probe(
    name: String,
    ops: Vec<&'static str>,
    f: &mut Objective<'_>,
    leaves: &[Matrix],
    analytic: &[Matrix],
    points: &[(usize, usize, usize)],
    tol: Tolerance,
) -> Result<CheckResult> {
    let h = tol.step;
    let mut work = leaves.to_vec();
    let f0 = f(&work)?;
    let mut result =
        CheckResult { name, ops, compared: 0, excused: 0, worst: 0.0, worst_abs: 0.0, mismatches: Vec::new() };
    for &(leaf, row, col) in points {
        let x = leaves[leaf].get(row, col);
        work[leaf].set(row, col, x + h);
        let fp = f(&work)?;
        work[leaf].set(row, col, x - h);
        let fm = f(&work)?;
        work[leaf].set(row, col, x);
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[leaf].get(row, col);
        if !(numeric.is_finite() && a.is_finite()) {
            return Err(Error::NonFinite { op: "gradcheck", node: leaf });
        }
        result.compared += 1;
        let diff = (a - numeric).abs();
        result.worst_abs = result.worst_abs.max(diff);
        if diff > tol.abs_floor {
            result.worst = result.worst.max(diff / a.abs().max(numeric.abs()));
        }
        if tol.agrees(a, numeric) {
            continue;
        }
        let (left, right) = ((f0 - fm) / h, (fp - f0) / h);
        if !roughly(left, right, h) && (roughly(a, left, h) || roughly(a, right, h)) {
            result.excused += 1;
            continue;
        }
        result.mismatches.push(Mismatch { leaf, row, col, analytic: a, numeric });
    }
    Ok(result)
}

fn all_points(leaves: &[Matrix]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (l, m) in leaves.iter().enumerate() {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                out.push((l, r, c));
            }
        }
    }
    out
}

/// Graph builder: receives one param node per leaf and returns a `1 x 1` root.
pub type GraphFn<'a> = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'a;

/// Checks every leaf entry of the graph built by `build`.
pub fn check_graph(name: &str, leaves: &[Matrix], build: &GraphFn<'_>, tol: Tolerance) -> Result<CheckResult> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|m| tape.param(m.clone())).collect();
    let root = build(&mut tape, &ids)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Matrix> = ids.iter().zip(leaves).map(|(&id, m)| grads.wrt(id, m)).collect();
    let ops = tape.op_names();
    let mut f = |values: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|m| t.param(m.clone())).collect();
        let root = build(&mut t, &ids)?;
        Ok(t.value(root).item())
    };
    probe(name.to_owned(), ops, &mut f, leaves, &analytic, &all_points(leaves), tol)
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// `sum(node * weights)` with fixed random weights, so every output entry
/// receives a distinct upstream gradient.
fn readout(tape: &mut Tape, node: NodeId, weights: &Matrix) -> Result<NodeId> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(node, w)?;
    Ok(tape.sum_all(p))
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Sigmoid,
    Log,
    Exp,
    Scale(f64),
    Shift(f64),
    Clip(f64, f64),
    Softmax(Axis),
    LogSumExp(Axis),
    Sum(Axis),
    SumAll,
    MeanAll,
    Min(Axis),
    Max(Axis),
    Transpose,
    Reshape(usize, usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Dropout(f64, u64),
    BatchNorm,
    SumRowGroups(usize),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    MatMul,
    Add,
    Sub,
    Mul,
    AddBroadcast(Broadcast),
    MulBroadcast(Broadcast),
    ConcatRows,
    ConcatCols,
}

/// One instruction of a generated graph; operands index earlier values.
#[derive(Clone, Copy, Debug)]
enum Step {
    Leaf(usize),
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
}

fn apply_unary(tape: &mut Tape, op: Unary, a: NodeId) -> Result<NodeId> {
    Ok(match op {
        Unary::Relu => tape.relu(a),
        Unary::Sigmoid => tape.sigmoid(a),
        Unary::Log => tape.log(a),
        Unary::Exp => tape.exp(a),
        Unary::Scale(s) => tape.scale(a, s),
        Unary::Shift(s) => tape.add_scalar(a, s),
        Unary::Clip(lo, hi) => tape.clip(a, lo, hi),
        Unary::Softmax(axis) => tape.softmax(a, axis)?,
        Unary::LogSumExp(axis) => tape.logsumexp(a, axis)?,
        Unary::Sum(axis) => tape.sum(a, axis),
        Unary::SumAll => tape.sum_all(a),
        Unary::MeanAll => tape.mean_all(a),
        Unary::Min(axis) => tape.min(a, axis)?,
        Unary::Max(axis) => tape.max(a, axis)?,
        Unary::Transpose => tape.transpose(a),
        Unary::Reshape(r, c) => tape.reshape(a, r, c)?,
        Unary::SliceRows(s, n) => tape.slice_rows(a, s, n)?,
        Unary::SliceCols(s, n) => tape.slice_cols(a, s, n)?,
        Unary::Dropout(rate, seed) => tape.dropout(a, rate, &mut ChaCha8Rng::seed_from_u64(seed))?,
        Unary::BatchNorm => tape.batchnorm(a, 1e-3)?.0,
        Unary::SumRowGroups(g) => tape.sum_row_groups(a, g)?,
    })
}

fn apply_binary(tape: &mut Tape, op: Binary, a: NodeId, b: NodeId) -> Result<NodeId> {
    match op {
        Binary::MatMul => tape.matmul(a, b),
        Binary::Add => tape.add(a, b),
        Binary::Sub => tape.sub(a, b),
        Binary::Mul => tape.mul(a, b),
        Binary::AddBroadcast(how) => tape.add_broadcast(a, b, how),
        Binary::MulBroadcast(how) => tape.mul_broadcast(a, b, how),
        Binary::ConcatRows => tape.concat_rows(&[a, b]),
        Binary::ConcatCols => tape.concat_cols(&[a, b]),
    }
}

/// A randomly generated graph: its leaves, instructions and the weighted
/// readouts of every value nothing else consumes.
struct RandomGraph {
    leaves: Vec<Matrix>,
    steps: Vec<Step>,
    sinks: Vec<(usize, Matrix)>,
}

impl RandomGraph {
    fn build(&self, tape: &mut Tape, leaves: &[NodeId]) -> Result<NodeId> {
        let mut values: Vec<NodeId> = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let id = match *step {
                Step::Leaf(l) => leaves[l],
                Step::Unary(op, a) => apply_unary(tape, op, values[a])?,
                Step::Binary(op, a, b) => apply_binary(tape, op, values[a], values[b])?,
            };
            values.push(id);
        }
        let mut root: Option<NodeId> = None;
        for (v, w) in &self.sinks {
            let r = readout(tape, values[*v], w)?;
            root = Some(match root {
                Some(acc) => tape.add(acc, r)?,
                None => r,
            });
        }
        root.ok_or_else(|| Error::invalid("graph without outputs"))
    }

    fn generate(rng: &mut ChaCha8Rng, ops: usize) -> Result<Self> {
        let mut g = RandomGraph { leaves: Vec::new(), steps: Vec::new(), sinks: Vec::new() };
        let mut tape = Tape::new();
        let mut nodes: Vec<NodeId> = Vec::new();
        let add_leaf = |g: &mut RandomGraph, tape: &mut Tape, nodes: &mut Vec<NodeId>, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let m = uniform(rows, cols, -1.5, 1.5, rng);
            nodes.push(tape.param(m.clone()));
            g.steps.push(Step::Leaf(g.leaves.len()));
            g.leaves.push(m);
            nodes.len() - 1
        };
        let (r, c) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        add_leaf(&mut g, &mut tape, &mut nodes, r, c, rng);

        let mut made = 0;
        let mut attempts = 0;
        while made < ops && attempts < 50 * ops {
            attempts += 1;
            // favor recent values so graphs grow deep rather than wide
            let lo = nodes.len().saturating_sub(3);
            let a = rng.gen_range(lo..nodes.len());
            let v = tape.value(nodes[a]).clone();
            let (rows, cols) = v.shape();
            let max = v.data().iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            let min = v.data().iter().fold(f64::INFINITY, |m, x| m.min(*x));
            let axis = if rng.gen_bool(0.5) { Axis::Row } else { Axis::Col };
            let step = match rng.gen_range(0..29) {
                0 => Some(Unary::Relu),
                1 => Some(Unary::Sigmoid),
                2 => (min > 0.1).then_some(Unary::Log),
                3 => (max < 2.0).then_some(Unary::Exp),
                4 => Some(Unary::Scale(rng.gen_range(-2.0..2.0))),
                5 => Some(Unary::Shift(rng.gen_range(-1.0..1.0))),
                6 => Some(Unary::Clip(-0.5, 0.5)),
                7 => Some(Unary::Softmax(axis)),
                8 => Some(Unary::LogSumExp(axis)),
                9 => Some(Unary::Sum(axis)),
                10 => Some(if rng.gen_bool(0.5) { Unary::SumAll } else { Unary::MeanAll }),
                11 => Some(Unary::Min(axis)),
                12 => Some(Unary::Max(axis)),
                13 => Some(Unary::Transpose),
                14 => Some(if rng.gen_bool(0.5) { Unary::Reshape(1, rows * cols) } else { Unary::Reshape(cols, rows) }),
                15 => {
                    let s = rng.gen_range(0..rows);
                    Some(Unary::SliceRows(s, rng.gen_range(1..=rows - s)))
                }
                16 => {
                    let s = rng.gen_range(0..cols);
                    Some(Unary::SliceCols(s, rng.gen_range(1..=cols - s)))
                }
                17 => Some(Unary::Dropout(0.3, rng.gen())),
                18 => {
                    // near-constant columns make the normalization ill-conditioned
                    let ok = rows >= 2 && (0..cols).all(|j| {
                        let col: Vec<f64> = (0..rows).map(|i| v.get(i, j)).collect();
                        let mean = col.iter().sum::<f64>() / rows as f64;
                        col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rows as f64 > 0.05
                    });
                    ok.then_some(Unary::BatchNorm)
                }
                19 => [2, 3].into_iter().find(|g| rows % g == 0 && rows > *g).map(Unary::SumRowGroups),
                _ => None,
            };
            let id = if let Some(op) = step {
                let id = apply_unary(&mut tape, op, nodes[a])?;
                g.steps.push(Step::Unary(op, a));
                id
            } else {
                let (op, shape) = match rng.gen_range(0..9) {
                    0 => (Binary::MatMul, (cols, rng.gen_range(1..=6))),
                    1 => (Binary::Add, (rows, cols)),
                    2 => (Binary::Sub, (rows, cols)),
                    3 => (Binary::Mul, (rows, cols)),
                    4 => (Binary::AddBroadcast(Broadcast::Row), (1, cols)),
                    5 => (Binary::MulBroadcast(Broadcast::Col), (rows, 1)),
                    6 => (Binary::MulBroadcast(Broadcast::Scalar), (1, 1)),
                    7 => (Binary::ConcatRows, (rng.gen_range(1..=3), cols)),
                    _ => (Binary::ConcatCols, (rows, rng.gen_range(1..=3))),
                };
                let partner = (0..nodes.len()).find(|&i| i != a && tape.value(nodes[i]).shape() == shape && rng.gen_bool(0.5));
                let b = match partner {
                    Some(b) => b,
                    None => add_leaf(&mut g, &mut tape, &mut nodes, shape.0, shape.1, rng),
                };
                let id = apply_binary(&mut tape, op, nodes[a], nodes[b])?;
                g.steps.push(Step::Binary(op, a, b));
                id
            };
            nodes.push(id);
            made += 1;
        }

        let mut used = vec![false; g.steps.len()];
        for step in &g.steps {
            match *step {
                Step::Leaf(_) => {}
                Step::Unary(_, a) => used[a] = true,
                Step::Binary(_, a, b) => {
                    used[a] = true;
                    used[b] = true;
                }
            }
        }
        for (i, u) in used.iter().enumerate() {
            if !u {
                let (r, c) = tape.value(nodes[i]).shape();
                g.sinks.push((i, uniform(r, c, -1.0, 1.0, rng)));
            }
        }
        Ok(g)
    }
}

/// Finite-difference checks of `count` random graphs of 3 to 8 ops with
/// shapes up to 6 x 6 (concatenation may grow them further).
pub fn random_graph_checks(count: usize, seed: u64, tol: Tolerance) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let ops = rng.gen_range(3..=8);
            let g = RandomGraph::generate(&mut rng, ops)?;
            check_graph(&format!("graph {i}"), &g.leaves, &|t, l| g.build(t, l), tol)
        })
        .collect()
}

/// One check per op kind, each op applied to random leaves and read out
/// with random weights.
pub fn op_checks(seed: u64, tol: Tolerance) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let unary = |name: &str, x: Matrix, op: Unary, rng: &mut ChaCha8Rng| -> Result<CheckResult> {
        let mut probe_tape = Tape::new();
        let xn = probe_tape.constant(x.clone());
        let y = apply_unary(&mut probe_tape, op, xn)?;
        let shape = probe_tape.value(y).shape();
        let w = uniform(shape.0, shape.1, -1.0, 1.0, rng);
        check_graph(
            name,
            &[x],
            &|t, l| {
                let y = apply_unary(t, op, l[0])?;
                readout(t, y, &w)
            },
            tol,
        )
    };
    let x = |rng: &mut ChaCha8Rng| uniform(4, 5, -1.5, 1.5, rng);
    let unaries = [
        ("relu", Unary::Relu),
        ("sigmoid", Unary::Sigmoid),
        ("exp", Unary::Exp),
        ("scale", Unary::Scale(-1.7)),
        ("add_scalar", Unary::Shift(0.3)),
        ("clip", Unary::Clip(-0.5, 0.5)),
        ("softmax rows", Unary::Softmax(Axis::Row)),
        ("softmax cols", Unary::Softmax(Axis::Col)),
        ("logsumexp rows", Unary::LogSumExp(Axis::Row)),
        ("logsumexp cols", Unary::LogSumExp(Axis::Col)),
        ("sum rows", Unary::Sum(Axis::Row)),
        ("sum cols", Unary::Sum(Axis::Col)),
        ("sum_all", Unary::SumAll),
        ("mean_all", Unary::MeanAll),
        ("min rows", Unary::Min(Axis::Row)),
        ("min cols", Unary::Min(Axis::Col)),
        ("max rows", Unary::Max(Axis::Row)),
        ("max cols", Unary::Max(Axis::Col)),
        ("transpose", Unary::Transpose),
        ("reshape", Unary::Reshape(2, 10)),
        ("slice_rows", Unary::SliceRows(1, 2)),
        ("slice_cols", Unary::SliceCols(2, 3)),
        ("dropout", Unary::Dropout(0.4, 11)),
        ("batchnorm", Unary::BatchNorm),
        ("sum_row_groups", Unary::SumRowGroups(2)),
    ];
    for (name, op) in unaries {
        let v = x(&mut rng);
        out.push(unary(name, v, op, &mut rng)?);
    }
    let positive = uniform(4, 5, 0.2, 2.0, &mut rng);
    out.push(unary("log", positive, Unary::Log, &mut rng)?);

    let binaries = [
        ("matmul", Binary::MatMul, (5, 3)),
        ("add", Binary::Add, (4, 5)),
        ("sub", Binary::Sub, (4, 5)),
        ("mul", Binary::Mul, (4, 5)),
        ("add_broadcast row", Binary::AddBroadcast(Broadcast::Row), (1, 5)),
        ("add_broadcast col", Binary::AddBroadcast(Broadcast::Col), (4, 1)),
        ("add_broadcast scalar", Binary::AddBroadcast(Broadcast::Scalar), (1, 1)),
        ("mul_broadcast row", Binary::MulBroadcast(Broadcast::Row), (1, 5)),
        ("mul_broadcast col", Binary::MulBroadcast(Broadcast::Col), (4, 1)),
        ("mul_broadcast scalar", Binary::MulBroadcast(Broadcast::Scalar), (1, 1)),
        ("concat_rows", Binary::ConcatRows, (2, 5)),
        ("concat_cols", Binary::ConcatCols, (4, 2)),
    ];
    for (name, op, shape) in binaries {
        let a = x(&mut rng);
        let b = uniform(shape.0, shape.1, -1.5, 1.5, &mut rng);
        let mut probe_tape = Tape::new();
        let (an, bn) = (probe_tape.constant(a.clone()), probe_tape.constant(b.clone()));
        let y = apply_binary(&mut probe_tape, op, an, bn)?;
        let s = probe_tape.value(y).shape();
        let w = uniform(s.0, s.1, -1.0, 1.0, &mut rng);
        out.push(check_graph(
            name,
            &[a, b],
            &|t, l| {
                let y = apply_binary(t, op, l[0], l[1])?;
                readout(t, y, &w)
            },
            tol,
        )?);
    }
    Ok(out)
}

/// Every loss kind, plus the sum-reduced set average, at `count` random
/// points each. Targets mix binary and fractional sets.
pub fn loss_checks(count: usize, seed: u64, tol: Tolerance) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        LossKind::Sce,
        LossKind::SetAverage(Reduce::Mean),
        LossKind::SetAverage(Reduce::Sum),
        LossKind::Hausdorff,
        LossKind::FlattenedCe,
    ];
    let mut out = Vec::new();
    for i in 0..count {
        let kind = kinds[i % kinds.len()];
        let (n, f) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let target = if rng.gen_bool(0.5) {
            uniform(n, f, 0.0, 1.0, &mut rng).map(f64::round)
        } else {
            uniform(n, f, 0.0, 1.0, &mut rng)
        };
        let y = uniform(n, f, 0.02, 0.98, &mut rng);
        out.push(check_graph(
            &format!("{kind} point {i}"),
            &[y],
            &|t, l| loss_node(t, kind, &target, l[0], DEFAULT_EPSILON),
            tol,
        )?);
    }
    // the batched loss used in training, three sets of three rows
    for kind in kinds {
        let target = uniform(9, 4, 0.0, 1.0, &mut rng).map(f64::round);
        let y = uniform(9, 4, 0.02, 0.98, &mut rng);
        out.push(check_graph(
            &format!("{kind} batch"),
            &[y],
            &|t, l| batch_loss_node(t, kind, &target, l[0], 3, DEFAULT_EPSILON),
            tol,
        )?);
    }
    Ok(out)
}

/// Set cross entropy at `X = {[0,1],[0,0]}`, `Y = {[0.1,0.5],[0.9,0.5]}`
/// against finite differences with an absolute tolerance of 1e-6.
pub fn sce_worked_example() -> Result<CheckResult> {
    let target = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]])?;
    let y = Matrix::from_rows(&[[0.1, 0.5], [0.9, 0.5]])?;
    let tol = Tolerance { step: 1e-5, rel: 0.0, abs_floor: 1e-6 };
    check_graph(
        "sce worked example",
        &[y],
        &|t, l| loss_node(t, LossKind::Sce, &target, l[0], DEFAULT_EPSILON),
        tol,
    )
}

/// Checks `samples` random parameter entries of a model under an SCE loss
/// on random binary targets, in evaluation mode.
pub fn check_model<M: SetModel + Clone>(
    name: &str,
    model: &M,
    inputs: &Matrix,
    targets: &Matrix,
    samples: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<CheckResult> {
    let (n, _) = model.output_shape();
    let batch = inputs.rows() / model.input_shape().0;
    let ids: Vec<ParamId> = model.params().trainable_ids().collect();
    let loss = |m: &M, tape: &mut Tape| -> Result<(NodeId, crate::nets::Binding)> {
        let bind = m.params().bind(tape);
        let x = tape.constant(inputs.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Forward::new(Mode::Eval, 0.7, &mut rng);
        let y = m.forward(tape, &bind, x, batch, &mut ctx)?;
        Ok((batch_loss_node(tape, LossKind::Sce, targets, y, n, DEFAULT_EPSILON)?, bind))
    };
    let mut tape = Tape::new();
    let (root, bind) = loss(model, &mut tape)?;
    let grads = tape.backward(root)?;
    let ops = tape.op_names();
    let by_id = bind.gradients(model.params(), &grads);
    let leaves: Vec<Matrix> = ids.iter().map(|&id| model.params().get(id).clone()).collect();
    let analytic: Vec<Matrix> = ids
        .iter()
        .map(|id| by_id.iter().find(|(g, _)| g == id).map(|(_, m)| m.clone()).expect("trainable gradient"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = BTreeSet::new();
    while points.len() < samples {
        let l = rng.gen_range(0..leaves.len());
        let (r, c) = leaves[l].shape();
        points.insert((l, rng.gen_range(0..r), rng.gen_range(0..c)));
    }
    let points: Vec<_> = points.into_iter().collect();
    let mut scratch = model.clone();
    let mut f = |values: &[Matrix]| -> Result<f64> {
        for (&id, v) in ids.iter().zip(values) {
            scratch.params_mut().set(id, v.clone())?;
        }
        let mut t = Tape::new();
        let (root, _) = loss(&scratch, &mut t)?;
        Ok(t.value(root).item())
    };
    probe(name.to_owned(), ops, &mut f, &leaves, &analytic, &points, tol)
}

/// Small autoencoder and rule net without dropout or batch normalization.
pub fn model_checks(seed: u64, tol: Tolerance) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let binary = |r: usize, c: usize, rng: &mut ChaCha8Rng| uniform(r, c, 0.0, 1.0, rng).map(f64::round);

    let mut cfg = AutoencoderConfig::new(4, 5, SegmentPlan::softmax_blocks(&[3, 2])?);
    cfg.width = 7;
    cfg.latent = 6;
    cfg.batchnorm = false;
    cfg.dropout = 0.0;
    cfg.seed = seed;
    let mut out = Vec::new();
    for mode in [LatentMode::GumbelBinary, LatentMode::None] {
        cfg.latent_mode = mode;
        let model = SetAutoencoder::new(cfg.clone())?;
        let x = binary(8, 5, &mut rng);
        out.push(check_model(&format!("autoencoder latent {mode:?}"), &model, &x, &x, 40, seed, tol)?);
    }

    let mut cfg = RuleNetConfig::new(2, 4);
    cfg.width = 9;
    cfg.batchnorm = false;
    cfg.dropout = 0.0;
    cfg.seed = seed;
    let model = RuleNet::new(cfg)?;
    let (rows, cols) = model.input_shape();
    let (n, f) = model.output_shape();
    let x = binary(2 * rows, cols, &mut rng);
    let y = binary(2 * n, f, &mut rng);
    out.push(check_model("rule net", &model, &x, &y, 40, seed, tol)?);
    Ok(out)
}

/// `x^2` whose backward reports `3x` instead of `2x`.
pub fn faulty_square(tape: &mut Tape, x: NodeId) -> NodeId {
    let value = tape.value(x).map(|v| v * v);
    tape.custom(
        "faulty_square",
        &[x],
        value,
        Box::new(|inputs, _, g| vec![inputs[0].zip_map(g, |x, g| 3.0 * x * g)]),
    )
}

/// A graph using [`faulty_square`]; the check is expected to fail.
pub fn faulty_op_check(seed: u64, tol: Tolerance) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(3, 3, 0.5, 1.5, &mut rng);
    let w = uniform(3, 3, -1.0, 1.0, &mut rng);
    check_graph(
        "custom faulty_square",
        &[x],
        &|t, l| {
            let y = faulty_square(t, l[0]);
            readout(t, y, &w)
        },
        tol,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub graphs: usize,
    pub loss_points: usize,
    pub inject_faulty_op: bool,
    pub tolerance: Tolerance,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 0, graphs: 200, loss_points: 100, inject_faulty_op: false, tolerance: Tolerance::default() }
    }
}

/// Ops, random graphs, losses, the worked example and the models.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let tol = opts.tolerance;
    let mut out = op_checks(opts.seed, tol)?;
    out.extend(random_graph_checks(opts.graphs, opts.seed, tol)?);
    out.extend(loss_checks(opts.loss_points, opts.seed, tol)?);
    out.push(sce_worked_example()?);
    out.extend(model_checks(opts.seed, tol)?);
    if opts.inject_faulty_op {
        out.push(faulty_op_check(opts.seed, tol)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_kind_passes() {
        let results = op_checks(1, Tolerance::default()).unwrap();
        for r in &results {
            assert!(r.passed(), "{r}");
        }
        let names: BTreeSet<&str> = results.iter().flat_map(|r| r.ops.iter().copied()).collect();
        for op in ["matmul", "batchnorm", "dropout", "sum_row_groups", "min", "max", "clip", "logsumexp"] {
            assert!(names.contains(op), "{op} not exercised");
        }
    }

    #[test]
    fn random_graphs_pass() {
        for r in random_graph_checks(40, 7, Tolerance::default()).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn losses_and_models_pass() {
        for r in loss_checks(20, 3, Tolerance::default()).unwrap() {
            assert!(r.passed(), "{r}");
        }
        assert!(sce_worked_example().unwrap().passed());
        for r in model_checks(2, Tolerance::default()).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn default_suite_passes_without_the_faulty_op() {
        let results = run_suite(&SuiteOptions::default()).unwrap();
        assert!(results.len() > 300);
        for r in &results {
            assert!(r.passed(), "{r}");
        }
        let compared: usize = results.iter().map(|r| r.compared).sum();
        let excused: usize = results.iter().map(|r| r.excused).sum();
        assert!(excused * 100 < compared, "{excused} of {compared} excused");
        let faulty = run_suite(&SuiteOptions { inject_faulty_op: true, ..SuiteOptions::default() }).unwrap();
        assert_eq!(faulty.iter().filter(|r| !r.passed()).count(), 1);
    }

    #[test]
    fn faulty_backward_is_caught_and_named() {
        let r = faulty_op_check(0, Tolerance::default()).unwrap();
        assert!(!r.passed());
        assert_eq!(r.mismatches.len(), 9);
        assert!(r.ops.contains(&"faulty_square"));
        let text = r.to_string();
        assert!(text.contains("FAIL") && text.contains("faulty_square"), "{text}");
        // d(x^2)/dx = 2x against the reported 3x
        let m = &r.mismatches[0];
        assert!((m.analytic / m.numeric - 1.5).abs() < 1e-6);
    }

    #[test]
    fn kinks_are_excused_not_hidden() {
        // relu exactly at zero: the reverse sweep uses the right-hand slope
        let x = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let r = check_graph(
            "relu kink",
            &[x],
            &|t, l| {
                let y = t.relu(l[0]);
                Ok(t.sum_all(y))
            },
            Tolerance::default(),
        )
        .unwrap();
        assert!(r.passed());
        assert_eq!(r.excused, 1);
    }
}
