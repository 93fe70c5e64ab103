//! Permutation-invariant set autoencoder.
//!
//! Encoder: a per-element stack, a sum over elements, a post-pool stack
//! and a dense layer to the latent logits. Decoder: dense blocks, a dense
//! layer to `N * F` values, reshaped to `N x F` and activated per segment.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{binary_concrete, gumbel_softmax, NodeId, Tape};
use crate::error::{Error, Result};

use super::layers::{Dense, DecoderStack, Forward};
use super::model::SetModel;
use super::params::{Binding, ParamStore};
use super::segments::SegmentPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// Independent two-way Gumbel-Softmax units.
    GumbelBinary,
    /// Gumbel-Softmax over consecutive groups of this many units.
    GumbelGroups(usize),
    Sigmoid,
    /// Raw latent logits.
    None,
}

impl fmt::Display for LatentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentMode::GumbelBinary => f.write_str("gumbel"),
            LatentMode::GumbelGroups(k) => write!(f, "gumbel-{k}"),
            LatentMode::Sigmoid => f.write_str("sigmoid"),
            LatentMode::None => f.write_str("none"),
        }
    }
}

/// Parses `gumbel`, `gumbel-<k>`, `sigmoid` or `none`.
impl FromStr for LatentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gumbel" => Ok(LatentMode::GumbelBinary),
            "sigmoid" => Ok(LatentMode::Sigmoid),
            "none" => Ok(LatentMode::None),
            _ => s
                .strip_prefix("gumbel-")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 2)
                .map(LatentMode::GumbelGroups)
                .ok_or_else(|| Error::invalid(format!("unknown latent mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub elements: usize,
    pub features: usize,
    pub width: usize,
    pub latent: usize,
    pub latent_mode: LatentMode,
    pub plan: SegmentPlan,
    pub batchnorm: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl AutoencoderConfig {
    pub fn new(elements: usize, features: usize, plan: SegmentPlan) -> Self {
        Self {
            elements,
            features,
            width: 300,
            latent: 100,
            latent_mode: LatentMode::GumbelBinary,
            plan,
            batchnorm: true,
            dropout: 0.5,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.elements == 0 || self.features == 0 || self.width == 0 || self.latent == 0 {
            return Err(Error::invalid("autoencoder dimensions must be positive"));
        }
        if self.plan.width() != self.features {
            return Err(Error::invalid(format!(
                "segment plan covers {} features, sets have {}",
                self.plan.width(),
                self.features
            )));
        }
        if let LatentMode::GumbelGroups(k) = self.latent_mode {
            if k == 0 || self.latent % k != 0 {
                return Err(Error::invalid(format!("latent {} does not split into groups of {k}", self.latent)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SetAutoencoder {
    pub config: AutoencoderConfig,
    params: ParamStore,
    phi: [Dense; 2],
    rho: [Dense; 2],
    to_latent: Dense,
    decoder: DecoderStack,
    to_output: Dense,
}

impl SetAutoencoder {
    pub fn new(config: AutoencoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let (f, w) = (config.features, config.width);
        let phi = [
            Dense::new(&mut p, "enc.phi0", f, w, &mut rng),
            Dense::new(&mut p, "enc.phi1", w, w, &mut rng),
        ];
        let rho = [
            Dense::new(&mut p, "enc.rho0", w, w, &mut rng),
            Dense::new(&mut p, "enc.rho1", w, w, &mut rng),
        ];
        let to_latent = Dense::new(&mut p, "enc.latent", w, config.latent, &mut rng);
        let decoder = DecoderStack::new(&mut p, "dec", config.latent, w, 2, config.batchnorm, config.dropout, &mut rng);
        let to_output = Dense::new(&mut p, "dec.out", w, config.elements * f, &mut rng);
        Ok(Self { config, params: p, phi, rho, to_latent, decoder, to_output })
    }

    /// Pooled, post-processed encoding before the latent layer: `batch x width`.
    pub fn pooled(&self, tape: &mut Tape, bind: &Binding, inputs: NodeId) -> Result<NodeId> {
        let mut h = inputs;
        for d in &self.phi {
            h = d.forward(tape, bind, h)?;
            h = tape.relu(h);
        }
        h = tape.sum_row_groups(h, self.config.elements)?;
        for d in &self.rho {
            h = d.forward(tape, bind, h)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// Latent code for a stacked batch: `batch x latent`.
    pub fn encode(&self, tape: &mut Tape, bind: &Binding, inputs: NodeId, ctx: &mut Forward<'_>) -> Result<NodeId> {
        let h = self.pooled(tape, bind, inputs)?;
        let logits = self.to_latent.forward(tape, bind, h)?;
        let noisy = ctx.is_training();
        match self.config.latent_mode {
            LatentMode::GumbelBinary => binary_concrete(tape, logits, ctx.temperature, noisy, ctx.rng),
            LatentMode::GumbelGroups(k) => gumbel_softmax(tape, logits, ctx.temperature, k, noisy, ctx.rng),
            LatentMode::Sigmoid => Ok(tape.sigmoid(logits)),
            LatentMode::None => Ok(logits),
        }
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        code: NodeId,
        batch: usize,
        ctx: &mut Forward<'_>,
    ) -> Result<NodeId> {
        let h = self.decoder.forward(tape, bind, code, &self.params, ctx)?;
        let out = self.to_output.forward(tape, bind, h)?;
        let out = tape.reshape(out, batch * self.config.elements, self.config.features)?;
        self.config.plan.activate(tape, out)
    }
}

impl SetModel for SetAutoencoder {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.elements, self.config.features)
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.config.elements, self.config.features)
    }

    fn plan(&self) -> &SegmentPlan {
        &self.config.plan
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        inputs: NodeId,
        batch: usize,
        ctx: &mut Forward<'_>,
    ) -> Result<NodeId> {
        let shape = tape.value(inputs).shape();
        if shape != (batch * self.config.elements, self.config.features) {
            return Err(Error::shape(
                "autoencoder",
                format!("input {shape:?} for {batch} sets of {:?}", self.input_shape()),
            ));
        }
        let code = self.encode(tape, bind, inputs, ctx)?;
        self.decode(tape, bind, code, batch, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::datasets::puzzle::{sample_states, PUZZLE_FEATURES, TILES};
    use crate::nets::layers::Mode;
    use crate::nets::model::predict;

    fn small() -> SetAutoencoder {
        let plan = SegmentPlan::softmax_blocks(&[9, 3, 3]).unwrap();
        let mut cfg = AutoencoderConfig::new(TILES, PUZZLE_FEATURES, plan);
        cfg.width = 32;
        cfg.latent = 16;
        SetAutoencoder::new(cfg).unwrap()
    }

    #[test]
    fn untrained_outputs_are_normalized_per_segment() {
        let model = small();
        let x = sample_states(3, 0, false).unwrap().iter().map(|s| s.encode().into_matrix()).collect::<Vec<_>>();
        for y in predict(&model, &x, 0.7).unwrap() {
            assert_eq!(y.shape(), (9, 15));
            for r in y.row_iter() {
                for (a, b) in [(0, 9), (9, 12), (12, 15)] {
                    assert!((r[a..b].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn latent_code_ignores_row_order() {
        let model = small();
        let x = sample_states(1, 4, false).unwrap()[0].encode().into_matrix();
        let shuffled = x.permute_rows(&[4, 2, 8, 0, 1, 7, 3, 6, 5]);
        let code = |m: &Matrix| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape);
            let xin = tape.constant(m.clone());
            let mut ctx = Forward::new(Mode::Eval, 0.7, &mut rng);
            let c = model.encode(&mut tape, &bind, xin, &mut ctx).unwrap();
            tape.value(c).clone()
        };
        assert_eq!(code(&x), code(&shuffled));
        assert_eq!(predict(&model, &[x], 0.7).unwrap(), predict(&model, &[shuffled], 0.7).unwrap());
    }

    #[test]
    fn latent_modes_round_trip() {
        for m in [LatentMode::GumbelBinary, LatentMode::GumbelGroups(4), LatentMode::Sigmoid, LatentMode::None] {
            assert_eq!(m.to_string().parse::<LatentMode>().unwrap(), m);
        }
        assert!("gumbel-1".parse::<LatentMode>().is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = small();
        assert!(predict(&model, &[Matrix::zeros(8, 15)], 1.0).is_err());
        let plan = SegmentPlan::sigmoid(4).unwrap();
        assert!(SetAutoencoder::new(AutoencoderConfig::new(9, 15, plan)).is_err());
    }
}
