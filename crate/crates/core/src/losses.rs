//! Set losses over a shared pairwise cross-entropy cost matrix.
//!
//! For target set `X` and output set `Y`, both `N x F` with entries in
//! `[0, 1]`, the element cost `H(x_i, y_j)` is the Bernoulli cross entropy
//! summed over features. The four losses reduce the `N x N` cost matrix
//! differently:
//!
//! * set cross entropy: `-sum_i logsumexp_j(-H(x_i, y_j))`
//! * set average (Chamfer): `sum_i min_j H(x_i, y_j)`, optionally divided by `N`
//! * directed Hausdorff: `max_i min_j H(x_i, y_j)`
//! * flattened cross entropy: `sum_i H(x_i, y_i)`, which is index aligned
//!
//! Every function here uses the natural logarithm.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{logsumexp_axis, Axis, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Clipping applied to probabilities before taking logarithms.
pub const DEFAULT_EPSILON: f64 = 1e-7;

/// A set of `N` elements with `F` features each, entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSet(Matrix);

impl ObjectSet {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(bad) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("object set entry {bad} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n_elements(&self) -> usize {
        self.0.rows()
    }

    pub fn n_features(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(self.0.permute_rows(order))
    }

    /// True when no two rows coincide after rounding to `{0, 1}`.
    pub fn is_duplicate_free(&self) -> bool {
        let mut seen = HashSet::new();
        self.0
            .row_iter()
            .all(|r| seen.insert(r.iter().map(|&v| v >= 0.5).collect::<Vec<bool>>()))
    }
}

fn clip(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Bernoulli cross entropy of `y` relative to `x`, summed over features.
pub fn elementwise_cross_entropy(x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "elementwise_cross_entropy",
            format!("{} vs {} features", x.len(), y.len()),
        ));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(&xv, &yv)| -xv * clip(yv, eps).ln() - (1.0 - xv) * clip(1.0 - yv, eps).ln())
        .sum())
}

/// Squared error `sum_f (x_f - y_f)^2`.
pub fn squared_error(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("squared_error", format!("{} vs {} features", x.len(), y.len())));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Element distance used by the classic set distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementDistance {
    CrossEntropy { epsilon: f64 },
    SquaredError,
}

impl Default for ElementDistance {
    fn default() -> Self {
        ElementDistance::CrossEntropy {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ElementDistance {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match *self {
            ElementDistance::CrossEntropy { epsilon } => elementwise_cross_entropy(x, y, epsilon),
            ElementDistance::SquaredError => squared_error(x, y),
        }
    }
}

/// `costs[i][j] = H(x_i, y_j)`.
#[derive(Clone, Debug)]
pub struct PairwiseCost {
    pub costs: Matrix,
    pub epsilon: f64,
}

fn check_pair(op: &'static str, x: &ObjectSet, y: &ObjectSet) -> Result<()> {
    if x.values().shape() != y.values().shape() {
        return Err(Error::shape(
            op,
            format!("target {:?} vs output {:?}", x.values().shape(), y.values().shape()),
        ));
    }
    Ok(())
}

pub fn pairwise_costs_with(x: &ObjectSet, y: &ObjectSet, dist: ElementDistance) -> Result<Matrix> {
    check_pair("pairwise_cost_matrix", x, y)?;
    let n = x.n_elements();
    let mut costs = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            costs.set(i, j, dist.eval(x.row(i), y.row(j))?);
        }
    }
    Ok(costs)
}

pub fn pairwise_cost_matrix(x: &ObjectSet, y: &ObjectSet, eps: f64) -> Result<PairwiseCost> {
    let costs = pairwise_costs_with(x, y, ElementDistance::CrossEntropy { epsilon: eps })?;
    Ok(PairwiseCost { costs, epsilon: eps })
}

pub fn set_cross_entropy(x: &ObjectSet, y: &ObjectSet, eps: f64) -> Result<f64> {
    let PairwiseCost { costs, .. } = pairwise_cost_matrix(x, y, eps)?;
    let lse = logsumexp_axis(&costs.map(|c| -c), Axis::Row)?;
    Ok(-lse.sum())
}

/// How the per-element minima of the set average are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduce {
    Sum,
    Mean,
}

fn row_minima(costs: &Matrix) -> impl Iterator<Item = f64> + '_ {
    costs.row_iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn set_average_distance_with(
    x: &ObjectSet,
    y: &ObjectSet,
    dist: ElementDistance,
    reduce: Reduce,
) -> Result<f64> {
    let costs = pairwise_costs_with(x, y, dist)?;
    let total: f64 = row_minima(&costs).sum();
    Ok(match reduce {
        Reduce::Sum => total,
        Reduce::Mean => total / x.n_elements().max(1) as f64,
    })
}

pub fn set_average_distance(x: &ObjectSet, y: &ObjectSet, eps: f64, reduce: Reduce) -> Result<f64> {
    set_average_distance_with(x, y, ElementDistance::CrossEntropy { epsilon: eps }, reduce)
}

pub fn hausdorff_distance_with(x: &ObjectSet, y: &ObjectSet, dist: ElementDistance) -> Result<f64> {
    let costs = pairwise_costs_with(x, y, dist)?;
    Ok(row_minima(&costs).fold(f64::NEG_INFINITY, f64::max))
}

/// Directed Hausdorff distance from the target `x` to the output `y`.
pub fn hausdorff_distance(x: &ObjectSet, y: &ObjectSet, eps: f64) -> Result<f64> {
    hausdorff_distance_with(x, y, ElementDistance::CrossEntropy { epsilon: eps })
}

pub fn flattened_cross_entropy(x: &ObjectSet, y: &ObjectSet, eps: f64) -> Result<f64> {
    check_pair("flattened_cross_entropy", x, y)?;
    (0..x.n_elements())
        .map(|i| elementwise_cross_entropy(x.row(i), y.row(i), eps))
        .sum()
}

/// Loss selector shared by every trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Sce,
    SetAverage(Reduce),
    Hausdorff,
    FlattenedCe,
}

impl LossKind {
    /// The four losses in table order (a) to (d); set average uses the mean.
    pub const ALL: [LossKind; 4] = [
        LossKind::FlattenedCe,
        LossKind::Sce,
        LossKind::SetAverage(Reduce::Mean),
        LossKind::Hausdorff,
    ];

    pub fn evaluate(&self, x: &ObjectSet, y: &ObjectSet, eps: f64) -> Result<f64> {
        match *self {
            LossKind::Sce => set_cross_entropy(x, y, eps),
            LossKind::SetAverage(r) => set_average_distance(x, y, eps, r),
            LossKind::Hausdorff => hausdorff_distance(x, y, eps),
            LossKind::FlattenedCe => flattened_cross_entropy(x, y, eps),
        }
    }

    /// Short command-line name.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Sce => "sce",
            LossKind::SetAverage(Reduce::Mean) => "avg",
            LossKind::SetAverage(Reduce::Sum) => "avg-sum",
            LossKind::Hausdorff => "hausdorff",
            LossKind::FlattenedCe => "ce",
        }
    }

    /// Row label of the results grid.
    pub fn table_label(&self) -> &'static str {
        match self {
            LossKind::FlattenedCe => "(a) H",
            LossKind::Sce => "(b) SH",
            LossKind::SetAverage(_) => "(c) A1H",
            LossKind::Hausdorff => "(d) HausH",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sce" => Ok(LossKind::Sce),
            "avg" => Ok(LossKind::SetAverage(Reduce::Mean)),
            "avg-sum" => Ok(LossKind::SetAverage(Reduce::Sum)),
            "hausdorff" => Ok(LossKind::Hausdorff),
            "ce" => Ok(LossKind::FlattenedCe),
            other => Err(Error::invalid(format!(
                "unknown loss `{other}` (expected ce, sce, avg, avg-sum or hausdorff)"
            ))),
        }
    }
}

/// `log(clip(y))` and `log(clip(1 - y))` recorded on the tape.
pub struct LogProbs {
    pub log_y: NodeId,
    pub log_not_y: NodeId,
}

pub fn log_probs(tape: &mut Tape, y: NodeId, eps: f64) -> LogProbs {
    let clipped = tape.clip(y, eps, 1.0 - eps);
    let log_y = tape.log(clipped);
    let neg = tape.neg(y);
    let not_y = tape.add_scalar(neg, 1.0);
    let not_y = tape.clip(not_y, eps, 1.0 - eps);
    let log_not_y = tape.log(not_y);
    LogProbs { log_y, log_not_y }
}

/// Pairwise costs as a tape node: `-(X log(Y)^T + (1 - X) log(1 - Y)^T)`.
pub fn cost_matrix_node(tape: &mut Tape, target: &Matrix, logs: &LogProbs) -> Result<NodeId> {
    let x = tape.constant(target.clone());
    let not_x = tape.constant(target.map(|v| 1.0 - v));
    let lt = tape.transpose(logs.log_y);
    let lnt = tape.transpose(logs.log_not_y);
    let a = tape.matmul(x, lt)?;
    let b = tape.matmul(not_x, lnt)?;
    let s = tape.add(a, b)?;
    Ok(tape.neg(s))
}

fn reduce_costs(tape: &mut Tape, kind: LossKind, costs: NodeId) -> Result<NodeId> {
    let n = tape.value(costs).rows();
    Ok(match kind {
        LossKind::Sce => {
            let neg = tape.neg(costs);
            let lse = tape.logsumexp(neg, Axis::Row)?;
            let s = tape.sum_all(lse);
            tape.neg(s)
        }
        LossKind::SetAverage(reduce) => {
            let mins = tape.min(costs, Axis::Row)?;
            let s = tape.sum_all(mins);
            match reduce {
                Reduce::Sum => s,
                Reduce::Mean => tape.scale(s, 1.0 / n as f64),
            }
        }
        LossKind::Hausdorff => {
            let mins = tape.min(costs, Axis::Row)?;
            tape.max(mins, Axis::Col)?
        }
        LossKind::FlattenedCe => unreachable!("flattened loss does not use the cost matrix"),
    })
}

fn flattened_node(tape: &mut Tape, target: &Matrix, logs: &LogProbs) -> Result<NodeId> {
    let x = tape.constant(target.clone());
    let not_x = tape.constant(target.map(|v| 1.0 - v));
    let a = tape.mul(x, logs.log_y)?;
    let b = tape.mul(not_x, logs.log_not_y)?;
    let s = tape.add(a, b)?;
    let total = tape.sum_all(s);
    Ok(tape.neg(total))
}

/// Differentiable loss between a constant target set and an output node of the same shape.
pub fn loss_node(tape: &mut Tape, kind: LossKind, target: &Matrix, output: NodeId, eps: f64) -> Result<NodeId> {
    if tape.value(output).shape() != target.shape() {
        return Err(Error::shape(
            "loss",
            format!("target {:?} vs output {:?}", target.shape(), tape.value(output).shape()),
        ));
    }
    let logs = log_probs(tape, output, eps);
    if kind == LossKind::FlattenedCe {
        return flattened_node(tape, target, &logs);
    }
    let costs = cost_matrix_node(tape, target, &logs)?;
    reduce_costs(tape, kind, costs)
}

/// Mean loss over a batch of sets stacked as `(B * n) x F` matrices.
pub fn batch_loss_node(
    tape: &mut Tape,
    kind: LossKind,
    targets: &Matrix,
    output: NodeId,
    n: usize,
    eps: f64,
) -> Result<NodeId> {
    let shape = tape.value(output).shape();
    if shape != targets.shape() || n == 0 || shape.0 % n != 0 {
        return Err(Error::shape(
            "batch_loss",
            format!("targets {:?}, output {shape:?}, set size {n}", targets.shape()),
        ));
    }
    let batch = shape.0 / n;
    let logs = log_probs(tape, output, eps);
    if kind == LossKind::FlattenedCe {
        let total = flattened_node(tape, targets, &logs)?;
        return Ok(tape.scale(total, 1.0 / batch as f64));
    }
    let mut per_set = Vec::with_capacity(batch);
    for b in 0..batch {
        let set_logs = LogProbs {
            log_y: tape.slice_rows(logs.log_y, b * n, n)?,
            log_not_y: tape.slice_rows(logs.log_not_y, b * n, n)?,
        };
        let costs = cost_matrix_node(tape, &targets.slice_rows(b * n, n), &set_logs)?;
        per_set.push(reduce_costs(tape, kind, costs)?);
    }
    let stacked = tape.concat_rows(&per_set)?;
    let total = tape.sum_all(stacked);
    Ok(tape.scale(total, 1.0 / batch as f64))
}
