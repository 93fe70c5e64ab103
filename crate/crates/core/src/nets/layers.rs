//! Dense and batch-normalization layers over stacked row batches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Broadcast, Matrix, NodeId, Tape};
use crate::error::Result;

use super::params::{Binding, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    /// Noise-free like `Eval`, but batch normalization uses the statistics
    /// of the pass itself and stores them as its running averages.
    Calibrate,
}

/// State threaded through one forward pass.
pub struct Forward<'a> {
    pub mode: Mode,
    pub temperature: f64,
    pub rng: &'a mut ChaCha8Rng,
    /// Buffer values to store once the pass is done.
    pub updates: Vec<(ParamId, Matrix)>,
}

impl<'a> Forward<'a> {
    pub fn new(mode: Mode, temperature: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { mode, temperature, rng, updates: Vec::new() }
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Glorot-uniform `fan_in x fan_out` matrix.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized buffer")
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(&format!("{name}.weight"), glorot_uniform(fan_in, fan_out, rng)),
            bias: store.add(&format!("{name}.bias"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: NodeId) -> Result<NodeId> {
        let h = tape.matmul(x, bind.node(self.weight))?;
        tape.add_broadcast(h, bind.node(self.bias), Broadcast::Row)
    }
}

/// Batch normalization with learnable scale and shift.
///
/// Training uses batch statistics and folds them into running averages;
/// evaluation uses the running averages. A calibration pass replaces the
/// averages with the exact statistics of the pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.99;
    pub const EPS: f64 = 1e-3;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Matrix::filled(1, width, 1.0)),
            beta: store.add(&format!("{name}.beta"), Matrix::zeros(1, width)),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Matrix::zeros(1, width)),
            running_var: store.add_buffer(&format!("{name}.running_var"), Matrix::filled(1, width, 1.0)),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: NodeId,
        store: &ParamStore,
        ctx: &mut Forward<'_>,
    ) -> Result<NodeId> {
        let normalized = if ctx.mode != Mode::Eval {
            let (y, stats) = tape.batchnorm(x, self.eps)?;
            let m = if ctx.mode == Mode::Calibrate { 0.0 } else { self.momentum };
            let blend = |old: &Matrix, new: &[f64]| {
                let data = old.data().iter().zip(new).map(|(o, n)| m * o + (1.0 - m) * n).collect();
                Matrix::from_vec(1, new.len(), data).expect("row shape")
            };
            ctx.updates.push((self.running_mean, blend(store.get(self.running_mean), &stats.mean)));
            ctx.updates.push((self.running_var, blend(store.get(self.running_var), &stats.var)));
            y
        } else {
            let shift = tape.constant(store.get(self.running_mean).map(|v| -v));
            let inv_std = tape.constant(store.get(self.running_var).map(|v| 1.0 / (v + self.eps).sqrt()));
            let centered = tape.add_broadcast(x, shift, Broadcast::Row)?;
            tape.mul_broadcast(centered, inv_std, Broadcast::Row)?
        };
        let scaled = tape.mul_broadcast(normalized, bind.node(self.gamma), Broadcast::Row)?;
        tape.add_broadcast(scaled, bind.node(self.beta), Broadcast::Row)
    }
}

/// `fc, relu, [batchnorm], [dropout]` blocks shared by both decoders.
#[derive(Clone, Debug)]
pub struct DecoderStack {
    pub layers: Vec<(Dense, Option<BatchNorm>)>,
    pub dropout: f64,
}

impl DecoderStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        depth: usize,
        batchnorm: bool,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input } else { width };
                let dense = Dense::new(store, &format!("{name}.fc{i}"), fan_in, width, rng);
                let bn = batchnorm.then(|| BatchNorm::new(store, &format!("{name}.bn{i}"), width));
                (dense, bn)
            })
            .collect();
        Self { layers, dropout }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        mut x: NodeId,
        store: &ParamStore,
        ctx: &mut Forward<'_>,
    ) -> Result<NodeId> {
        for (dense, bn) in &self.layers {
            x = dense.forward(tape, bind, x)?;
            x = tape.relu(x);
            if let Some(bn) = bn {
                x = bn.forward(tape, bind, x, store, ctx)?;
            }
            if ctx.is_training() && self.dropout > 0.0 {
                x = tape.dropout(x, self.dropout, ctx.rng)?;
            }
        }
        Ok(x)
    }
}
