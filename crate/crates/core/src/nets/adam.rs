//! Adam optimizer over a [`ParamStore`].

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    /// First and second moments, indexed like the store.
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) -> Result<()> {
        self.moments.resize(store.len(), None);
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (id, g) in grads {
            let index = id.index();
            let value = store.get_mut(*id);
            if value.shape() != g.shape() {
                return Err(Error::shape("adam", format!("gradient {:?} for {:?}", g.shape(), value.shape())));
            }
            let (m, v) = self.moments[index]
                .get_or_insert_with(|| (Matrix::zeros(g.rows(), g.cols()), Matrix::zeros(g.rows(), g.cols())));
            for (((w, m), v), g) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Named optimizer state for checkpoints.
    pub fn state(&self, store: &ParamStore) -> Vec<(String, Matrix)> {
        let mut out = vec![("adam.step".to_owned(), Matrix::scalar(self.step as f64))];
        for (id, slot) in store.ids().zip(&self.moments) {
            if let Some((m, v)) = slot {
                out.push((format!("adam.m.{}", store.name(id)), m.clone()));
                out.push((format!("adam.v.{}", store.name(id)), v.clone()));
            }
        }
        out
    }

    /// Restores state written by [`Adam::state`].
    pub fn restore(&mut self, store: &ParamStore, arrays: &[(String, Matrix)]) -> Result<()> {
        let find = |name: &str| arrays.iter().find(|(n, _)| n == name).map(|(_, m)| m);
        let step = find("adam.step").ok_or_else(|| Error::Format("missing adam.step".into()))?;
        self.step = step.item() as u64;
        self.moments = store
            .ids()
            .map(|id| {
                let m = find(&format!("adam.m.{}", store.name(id)));
                let v = find(&format!("adam.v.{}", store.name(id)));
                m.zip(v).map(|(m, v)| (m.clone(), v.clone()))
            })
            .collect();
        Ok(())
    }
}
