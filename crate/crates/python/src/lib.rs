//! Python bindings: set losses with gradients, the puzzle success check,
//! clause enumeration and the gradient checker.
//!
//! Sets cross the boundary as lists of rows (`list[list[float]]`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use setloss::autodiff::{Matrix, Tape};
use setloss::datasets::puzzle::all_states;
use setloss::datasets::{enumerate_clauses as enumerate, KnowledgeGraph};
use setloss::experiments::puzzle_plan;
use setloss::gradcheck::{run_suite, SuiteOptions};
use setloss::losses::{self, loss_node, LossKind, ObjectSet, Reduce, DEFAULT_EPSILON};
use setloss::metrics::reconstruction_success;

fn err(e: setloss::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn object_set(rows: Vec<Vec<f64>>) -> PyResult<ObjectSet> {
    ObjectSet::new(matrix(rows)?).map_err(err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn reduce(name: &str) -> PyResult<Reduce> {
    match name {
        "mean" => Ok(Reduce::Mean),
        "sum" => Ok(Reduce::Sum),
        other => Err(PyValueError::new_err(format!("reduce must be `mean` or `sum`, got `{other}`"))),
    }
}

#[pyfunction]
#[pyo3(signature = (target, output, eps = DEFAULT_EPSILON))]
fn set_cross_entropy(target: Vec<Vec<f64>>, output: Vec<Vec<f64>>, eps: f64) -> PyResult<f64> {
    losses::set_cross_entropy(&object_set(target)?, &object_set(output)?, eps).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (target, output, eps = DEFAULT_EPSILON, reduce = "mean"))]
fn set_average_distance(target: Vec<Vec<f64>>, output: Vec<Vec<f64>>, eps: f64, reduce: &str) -> PyResult<f64> {
    let r = self::reduce(reduce)?;
    losses::set_average_distance(&object_set(target)?, &object_set(output)?, eps, r).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (target, output, eps = DEFAULT_EPSILON))]
fn hausdorff_distance(target: Vec<Vec<f64>>, output: Vec<Vec<f64>>, eps: f64) -> PyResult<f64> {
    losses::hausdorff_distance(&object_set(target)?, &object_set(output)?, eps).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (target, output, eps = DEFAULT_EPSILON))]
fn flattened_cross_entropy(target: Vec<Vec<f64>>, output: Vec<Vec<f64>>, eps: f64) -> PyResult<f64> {
    losses::flattened_cross_entropy(&object_set(target)?, &object_set(output)?, eps).map_err(err)
}

/// Loss value and its gradient with respect to `output`. `kind` is one of
/// `ce`, `sce`, `avg`, `avg-sum` or `hausdorff`.
#[pyfunction]
#[pyo3(signature = (kind, target, output, eps = DEFAULT_EPSILON))]
fn loss_and_gradient(
    kind: &str,
    target: Vec<Vec<f64>>,
    output: Vec<Vec<f64>>,
    eps: f64,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let kind: LossKind = kind.parse().map_err(err)?;
    let (target, output) = (matrix(target)?, matrix(output)?);
    let mut tape = Tape::new();
    let leaf = tape.param(output.clone());
    let root = loss_node(&mut tape, kind, &target, leaf, eps).map_err(err)?;
    let value = tape.value(root).get(0, 0);
    let grads = tape.backward(root).map_err(err)?;
    Ok((value, to_rows(&grads.wrt(leaf, &output))))
}

/// Whether the rounded `output` equals the 9-row puzzle `target` as a
/// multiset of rows.
#[pyfunction]
fn puzzle_success(target: Vec<Vec<f64>>, output: Vec<Vec<f64>>) -> PyResult<bool> {
    reconstruction_success(&matrix(target)?, &matrix(output)?, &puzzle_plan()).map_err(err)
}

/// Number of distinct puzzle states, counted by exhaustive enumeration.
#[pyfunction]
fn puzzle_state_count() -> usize {
    all_states().count()
}

/// Every walk of `hops` steps over distinct entities of the undirected
/// graph given as name pairs.
#[pyfunction]
fn enumerate_clauses(edges: Vec<(String, String)>, hops: usize) -> PyResult<Vec<Vec<String>>> {
    let mut g = KnowledgeGraph::new();
    for (a, b) in &edges {
        let (a, b) = (g.add_entity(a), g.add_entity(b));
        g.add_edge(a, b).map_err(err)?;
    }
    let clauses = enumerate(&g, hops).map_err(err)?;
    Ok(clauses.iter().map(|c| c.entities.iter().map(|&e| g.name(e).to_owned()).collect()).collect())
}

/// Runs the gradient checker; returns the number of checks and the names
/// of those that failed.
#[pyfunction]
#[pyo3(signature = (seed = 0, graphs = 20, loss_points = 20))]
fn gradcheck(py: Python<'_>, seed: u64, graphs: usize, loss_points: usize) -> PyResult<(usize, Vec<String>)> {
    let opts = SuiteOptions { seed, graphs, loss_points, ..SuiteOptions::default() };
    let results = py.detach(|| run_suite(&opts)).map_err(err)?;
    let failed = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    Ok((results.len(), failed))
}

#[pymodule]
fn pysetloss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_EPSILON", DEFAULT_EPSILON)?;
    m.add_function(wrap_pyfunction!(set_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(set_average_distance, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff_distance, m)?)?;
    m.add_function(wrap_pyfunction!(flattened_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(loss_and_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(puzzle_success, m)?)?;
    m.add_function(wrap_pyfunction!(puzzle_state_count, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_clauses, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
