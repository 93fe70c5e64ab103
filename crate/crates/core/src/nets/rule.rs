//! Clause-body predictor: the head vector feeds a decoder directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::datasets::clauses::{head_width, term_width, PREDICATES};
use crate::error::{Error, Result};

use super::layers::{Dense, DecoderStack, Forward};
use super::model::SetModel;
use super::params::{Binding, ParamStore};
use super::segments::SegmentPlan;

#[derive(Clone, Debug, PartialEq)]
pub struct RuleNetConfig {
    pub hops: usize,
    pub entities: usize,
    pub width: usize,
    pub batchnorm: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl RuleNetConfig {
    pub fn new(hops: usize, entities: usize) -> Self {
        Self { hops, entities, width: 400, batchnorm: true, dropout: 0.5, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct RuleNet {
    pub config: RuleNetConfig,
    plan: SegmentPlan,
    params: ParamStore,
    decoder: DecoderStack,
    to_output: Dense,
}

impl RuleNet {
    pub fn new(config: RuleNetConfig) -> Result<Self> {
        if config.hops == 0 || config.entities == 0 || config.width == 0 {
            return Err(Error::invalid("rule net dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let input = head_width(config.hops, config.entities);
        let decoder = DecoderStack::new(&mut p, "dec", input, config.width, 2, config.batchnorm, config.dropout, &mut rng);
        let out = config.hops * term_width(config.entities);
        let to_output = Dense::new(&mut p, "dec.out", config.width, out, &mut rng);
        let plan = SegmentPlan::softmax_blocks(&[PREDICATES, config.entities, config.entities])?;
        Ok(Self { config, plan, params: p, decoder, to_output })
    }
}

impl SetModel for RuleNet {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_shape(&self) -> (usize, usize) {
        (1, head_width(self.config.hops, self.config.entities))
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.config.hops, term_width(self.config.entities))
    }

    fn plan(&self) -> &SegmentPlan {
        &self.plan
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
        if shape != (batch, self.input_shape().1) {
            return Err(Error::shape(
                "rule net",
                format!("input {shape:?}, expected {batch} heads of width {}", self.input_shape().1),
            ));
        }
        let h = self.decoder.forward(tape, bind, inputs, &self.params, ctx)?;
        let out = self.to_output.forward(tape, bind, h)?;
        let (n, f) = self.output_shape();
        let out = tape.reshape(out, batch * n, f)?;
        self.plan.activate(tape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::nets::model::predict;

    fn check_blocks(y: &Matrix, e: usize) {
        for r in y.row_iter() {
            for (a, b) in [(0, 2), (2, 2 + e), (2 + e, 2 + 2 * e)] {
                assert!((r[a..b].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn output_shapes() {
        for n in [2, 5] {
            let mut cfg = RuleNetConfig::new(n, 163);
            cfg.width = 16;
            let net = RuleNet::new(cfg).unwrap();
            let head = Matrix::zeros(1, 2 + 163 * (n + 1));
            let y = &predict(&net, &[head], 1.0).unwrap()[0];
            assert_eq!(y.shape(), (n, 328));
            check_blocks(y, 163);
        }
    }

    #[test]
    fn wrong_head_width_is_rejected() {
        let mut cfg = RuleNetConfig::new(2, 163);
        cfg.width = 8;
        let net = RuleNet::new(cfg).unwrap();
        assert!(predict(&net, &[Matrix::zeros(1, 2 + 163 * 4)], 1.0).is_err());
    }
}
