//! Common interface of the trainable set predictors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};

use super::layers::{Forward, Mode};
use super::params::{Binding, ParamStore};
use super::segments::SegmentPlan;

/// Rows of a batch handed to a model at once during evaluation.
const PREDICT_CHUNK: usize = 250;

pub trait SetModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Shape of one input example.
    fn input_shape(&self) -> (usize, usize);

    /// Shape of one output set.
    fn output_shape(&self) -> (usize, usize);

    fn plan(&self) -> &SegmentPlan;

    /// Maps `batch` inputs stacked into one matrix to their output sets
    /// stacked the same way.
    fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        inputs: NodeId,
        batch: usize,
        ctx: &mut Forward<'_>,
    ) -> Result<NodeId>;
}

/// Stacks equally shaped examples into one matrix.
pub fn stack(examples: &[&Matrix], shape: (usize, usize)) -> Result<Matrix> {
    if let Some(m) = examples.iter().find(|m| m.shape() != shape) {
        return Err(Error::shape("stack", format!("example {:?}, model expects {shape:?}", m.shape())));
    }
    Matrix::vstack(examples)
}

/// Evaluation-mode outputs for each input.
pub fn predict<M: SetModel + ?Sized>(model: &M, inputs: &[Matrix], temperature: f64) -> Result<Vec<Matrix>> {
    let (n, f) = model.output_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let refs: Vec<&Matrix> = chunk.iter().collect();
        let x = stack(&refs, model.input_shape())?;
        let mut tape = Tape::new();
        let bind = model.params().bind(&mut tape);
        let x = tape.constant(x);
        let mut ctx = Forward::new(Mode::Eval, temperature, &mut rng);
        let y = model.forward(&mut tape, &bind, x, chunk.len(), &mut ctx)?;
        let y = tape.value(y);
        out.extend((0..chunk.len()).map(|b| y.slice_rows(b * n, n)));
        debug_assert_eq!(y.cols(), f);
    }
    Ok(out)
}
