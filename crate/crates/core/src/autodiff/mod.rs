//! Minimal reverse-mode automatic differentiation over dense matrices.

mod gumbel;
mod matrix;
mod tape;

pub use gumbel::{binary_concrete, binary_concrete_mean, gumbel_noise, gumbel_softmax, gumbel_softmax_sample};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use tape::{logsumexp_axis, softmax_axis, Axis, BackwardFn, BatchStats, Broadcast, Gradients, NodeId, Tape};
