//! Reconstruction success and clause-body accuracy.

use std::collections::HashMap;
use std::fmt;

use crate::autodiff::Matrix;
use crate::datasets::clauses::{ClauseExample, Term};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nets::{predict, SegmentPlan, SetModel};

/// Rounds every row of `y` with the plan's segment rules.
pub fn round_set(y: &Matrix, plan: &SegmentPlan) -> Result<Matrix> {
    let rows = y.row_iter().map(|r| plan.round_row(r)).collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, y.cols()));
    }
    Matrix::from_rows(&rows)
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// Row-multiset equality by exact hashing.
pub fn same_rows(a: &Matrix, b: &Matrix) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let mut counts: HashMap<Vec<u64>, i64> = HashMap::new();
    for r in a.row_iter() {
        *counts.entry(row_key(r)).or_default() += 1;
    }
    for r in b.row_iter() {
        *counts.entry(row_key(r)).or_default() -= 1;
    }
    counts.values().all(|&c| c == 0)
}

/// True when the rounded output equals the target as a multiset of rows,
/// so every target row is matched by a distinct output row.
pub fn reconstruction_success(target: &Matrix, output: &Matrix, plan: &SegmentPlan) -> Result<bool> {
    if target.shape() != output.shape() {
        return Err(Error::shape(
            "reconstruction_success",
            format!("target {:?} vs output {:?}", target.shape(), output.shape()),
        ));
    }
    Ok(same_rows(target, &round_set(output, plan)?))
}

/// Fraction of successful reconstructions.
pub fn success_ratio(targets: &[Matrix], outputs: &[Matrix], plan: &SegmentPlan) -> Result<f64> {
    if targets.len() != outputs.len() {
        return Err(Error::invalid(format!("{} targets but {} outputs", targets.len(), outputs.len())));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no sets to evaluate"));
    }
    let mut hits = 0;
    for (x, y) in targets.iter().zip(outputs) {
        hits += usize::from(reconstruction_success(x, y, plan)?);
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Every body term appears among the argmax-decoded output rows.
pub fn clause_success(clause: &ClauseExample, output: &Matrix, entities: usize) -> Result<bool> {
    let decoded = ClauseExample::decode_body(output, entities)?;
    Ok(clause.body().iter().all(|t| decoded.contains(t)))
}

/// Fraction of clauses whose body is fully recovered.
pub fn rule_accuracy(clauses: &[ClauseExample], outputs: &[Matrix], entities: usize) -> Result<f64> {
    if clauses.len() != outputs.len() {
        return Err(Error::invalid(format!("{} clauses but {} outputs", clauses.len(), outputs.len())));
    }
    if clauses.is_empty() {
        return Err(Error::invalid("no clauses to evaluate"));
    }
    let mut hits = 0;
    for (c, y) in clauses.iter().zip(outputs) {
        hits += usize::from(clause_success(c, y, entities)?);
    }
    Ok(hits as f64 / clauses.len() as f64)
}

/// [`rule_accuracy`] of a trained model on the given clauses.
pub fn model_rule_accuracy<M: SetModel + ?Sized>(
    model: &M,
    clauses: &[ClauseExample],
    entities: usize,
    temperature: f64,
) -> Result<f64> {
    let heads: Vec<Matrix> = clauses.iter().map(|c| c.head_matrix(entities)).collect();
    rule_accuracy(clauses, &predict(model, &heads, temperature)?, entities)
}

/// Decoded terms, for inspection.
pub fn decoded_terms(output: &Matrix, entities: usize) -> Result<Vec<Term>> {
    ClauseExample::decode_body(output, entities)
}

/// Outcome of one evaluated run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub loss: LossKind,
    pub scenario: u8,
    pub seed: u64,
    /// Which split was evaluated, e.g. `train` or `test`.
    pub split: String,
    pub successes: usize,
    pub evaluated: usize,
}

impl EvalReport {
    pub fn ratio(&self) -> f64 {
        if self.evaluated == 0 {
            return 0.0;
        }
        self.successes as f64 / self.evaluated as f64
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} scenario {} seed {} {}: {}/{} = {:.3}",
            self.loss,
            self.scenario,
            self.seed,
            self.split,
            self.successes,
            self.evaluated,
            self.ratio()
        )
    }
}
