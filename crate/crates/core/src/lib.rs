//! Permutation-invariant set losses and the machinery to train set
//! reconstruction and rule-body prediction models with them.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nets;

pub use error::{Error, Result};
