//! Minibatch training with best-epoch selection on a validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape};
use crate::datasets::Pairs;
use crate::error::{Error, Result};
use crate::losses::{batch_loss_node, LossKind, DEFAULT_EPSILON};

use super::adam::{Adam, AdamConfig};
use super::layers::{Forward, Mode};
use super::model::{stack, SetModel};
use super::params::ParamStore;

/// Exponential annealing from `start` to `end` over the whole run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { start: 5.0, end: 0.7 }
    }
}

impl TemperatureSchedule {
    /// Temperature at `step` of `total` steps.
    pub fn at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.end;
        }
        let t = step.min(total - 1) as f64 / (total - 1) as f64;
        self.start * (self.end / self.start).powf(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub temperature: TemperatureSchedule,
    pub seed: u64,
    /// Probability clip used inside the losses.
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            epochs: 30,
            batch_size: 100,
            adam: AdamConfig::default(),
            temperature: TemperatureSchedule::default(),
            seed: 0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        let t = self.temperature;
        if !(t.start > 0.0 && t.end > 0.0) {
            return Err(Error::invalid("temperatures must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss in training mode.
    pub train_loss: f64,
    /// Mean per-set loss on the validation pairs in evaluation mode.
    pub val_loss: Option<f64>,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.train_loss)
    }

    /// Loss trace as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,temperature\n");
        for r in &self.history {
            let val = r.val_loss.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.temperature));
        }
        out
    }
}

fn check_pairs<M: SetModel + ?Sized>(model: &M, pairs: &Pairs) -> Result<()> {
    if pairs.inputs.len() != pairs.targets.len() {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    let (input, output) = (model.input_shape(), model.output_shape());
    for (x, y) in pairs.inputs.iter().zip(&pairs.targets) {
        if x.shape() != input || y.shape() != output {
            return Err(Error::shape(
                "train",
                format!("pair {:?} -> {:?}, model maps {input:?} -> {output:?}", x.shape(), y.shape()),
            ));
        }
    }
    Ok(())
}

/// Mean per-set loss of the model in evaluation mode.
pub fn evaluate_loss<M: SetModel + ?Sized>(
    model: &M,
    pairs: &Pairs,
    loss: LossKind,
    epsilon: f64,
    temperature: f64,
) -> Result<f64> {
    check_pairs(model, pairs)?;
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    let n = model.output_shape().0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for idx in (0..pairs.len()).collect::<Vec<_>>().chunks(250) {
        let xs: Vec<&Matrix> = idx.iter().map(|&i| &pairs.inputs[i]).collect();
        let ys: Vec<&Matrix> = idx.iter().map(|&i| &pairs.targets[i]).collect();
        let mut tape = Tape::new();
        let bind = model.params().bind(&mut tape);
        let x = tape.constant(stack(&xs, model.input_shape())?);
        let mut ctx = Forward::new(Mode::Eval, temperature, &mut rng);
        let y = model.forward(&mut tape, &bind, x, idx.len(), &mut ctx)?;
        let l = batch_loss_node(&mut tape, loss, &stack(&ys, model.output_shape())?, y, n, epsilon)?;
        total += tape.value(l).item() * idx.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Most sets used by [`calibrate_batchnorm`].
pub const CALIBRATION_SETS: usize = 1000;

/// Recomputes batch-normalization statistics from one noise-free pass
/// over `inputs` (an evenly strided subset when there are more than
/// [`CALIBRATION_SETS`]). Running averages lag far behind the weights
/// when a run has only a few hundred steps.
pub fn calibrate_batchnorm<M: SetModel + ?Sized>(model: &mut M, inputs: &[Matrix], temperature: f64) -> Result<()> {
    let store = model.params();
    if inputs.is_empty() || store.ids().all(|id| store.is_trainable(id)) {
        return Ok(());
    }
    let stride = inputs.len().div_ceil(CALIBRATION_SETS);
    let xs: Vec<&Matrix> = inputs.iter().step_by(stride).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let x = tape.constant(stack(&xs, model.input_shape())?);
    let mut ctx = Forward::new(Mode::Calibrate, temperature, &mut rng);
    model.forward(&mut tape, &bind, x, xs.len(), &mut ctx)?;
    let updates = std::mem::take(&mut ctx.updates);
    let store = model.params_mut();
    for (id, v) in updates {
        store.set(id, v)?;
    }
    Ok(())
}

fn non_finite(tape: &Tape) -> Error {
    match tape.first_non_finite() {
        Some((node, op)) => Error::NonFinite { op, node: node.index() },
        None => Error::NonFinite { op: "loss", node: tape.len() },
    }
}

/// Trains in place and leaves the model at its best validation epoch
/// (the last epoch when `val` is empty). Batch-normalization statistics
/// are recalibrated on the training inputs after every epoch.
pub fn train<M: SetModel + ?Sized>(model: &mut M, train: &Pairs, val: &Pairs, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_pairs(model, train)?;
    check_pairs(model, val)?;
    let n = model.output_shape().0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut temperature = cfg.temperature.at(step, total_steps);
        for batch in order.chunks(cfg.batch_size) {
            temperature = cfg.temperature.at(step, total_steps);
            let xs: Vec<&Matrix> = batch.iter().map(|&i| &train.inputs[i]).collect();
            let ys: Vec<&Matrix> = batch.iter().map(|&i| &train.targets[i]).collect();
            let targets = stack(&ys, model.output_shape())?;
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape);
            let x = tape.constant(stack(&xs, model.input_shape())?);
            let mut ctx = Forward::new(Mode::Train, temperature, &mut rng);
            let y = model.forward(&mut tape, &bind, x, batch.len(), &mut ctx)?;
            let updates = std::mem::take(&mut ctx.updates);
            let loss = batch_loss_node(&mut tape, cfg.loss, &targets, y, n, cfg.epsilon)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(&tape));
            }
            let grads = tape.backward(loss)?;
            let grads = bind.gradients(model.params(), &grads);
            if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::NonFinite { op: "backward", node: bind.node(*id).index() });
            }
            let store = model.params_mut();
            adam.update(store, &grads)?;
            for (id, v) in updates {
                store.set(id, v)?;
            }
            epoch_loss += value * batch.len() as f64;
            step += 1;
        }
        calibrate_batchnorm(model, &train.inputs, cfg.temperature.end)?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, val, cfg.loss, cfg.epsilon, cfg.temperature.end)?)
        };
        if let Some(v) = val_loss {
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params().clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            temperature,
        });
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => cfg.epochs - 1,
    };
    Ok(TrainReport { history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::NodeId;
    use crate::datasets::puzzle::sample_states;
    use crate::nets::autoencoder::{AutoencoderConfig, SetAutoencoder};
    use crate::nets::params::Binding;
    use crate::nets::segments::SegmentPlan;

    fn puzzle_pairs(count: usize, seed: u64) -> Pairs {
        let sets: Vec<Matrix> = sample_states(count, seed, false)
            .unwrap()
            .iter()
            .map(|s| s.encode().into_matrix())
            .collect();
        Pairs { inputs: sets.clone(), targets: sets }
    }

    fn small_model(seed: u64) -> SetAutoencoder {
        let mut cfg = AutoencoderConfig::new(9, 15, SegmentPlan::softmax_blocks(&[9, 3, 3]).unwrap());
        cfg.width = 48;
        cfg.latent = 24;
        cfg.seed = seed;
        SetAutoencoder::new(cfg).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let s = TemperatureSchedule::default();
        assert_eq!(s.at(0, 10), 5.0);
        assert!((s.at(9, 10) - 0.7).abs() < 1e-12);
        assert!(s.at(4, 10) < 5.0 && s.at(4, 10) > 0.7);
        assert_eq!(s.at(0, 1), 0.7);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = puzzle_pairs(12, 1);
        let val = puzzle_pairs(3, 2);
        let mut cfg = TrainConfig::new(LossKind::Sce);
        cfg.epochs = 3;
        cfg.batch_size = 5;
        let run = || {
            let mut m = small_model(3);
            let r = train(&mut m, &data, &val, &cfg).unwrap();
            (r, m.params().named())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn memorizes_a_single_set() {
        let data = puzzle_pairs(1, 5);
        // a one-set batch has no batch statistics: normalization would zero
        // every activation and leave all output rows identical
        let mut cfg = small_model(0).config;
        cfg.batchnorm = false;
        let mut m = SetAutoencoder::new(cfg).unwrap();
        let mut cfg = TrainConfig::new(LossKind::Sce);
        cfg.epochs = 200;
        let report = train(&mut m, &data, &Pairs::default(), &cfg).unwrap();
        assert!(report.final_train_loss() < report.history[0].train_loss / 10.0);
        let loss = evaluate_loss(&m, &data, LossKind::Sce, cfg.epsilon, 0.7).unwrap();
        assert!(loss < 0.05, "{loss}");
    }

    #[test]
    fn invalid_configs() {
        let data = puzzle_pairs(2, 0);
        let mut m = small_model(0);
        let mut cfg = TrainConfig::new(LossKind::Sce);
        cfg.epochs = 0;
        assert!(train(&mut m, &data, &Pairs::default(), &cfg).is_err());
        let cfg = TrainConfig::new(LossKind::Sce);
        assert!(train(&mut m, &Pairs::default(), &Pairs::default(), &cfg).is_err());
        let bad = Pairs { inputs: vec![Matrix::zeros(8, 15)], targets: vec![Matrix::zeros(8, 15)] };
        assert!(train(&mut m, &bad, &Pairs::default(), &cfg).is_err());
    }

    /// Emits `log(-1)` so the first bad node is known.
    struct Broken {
        params: ParamStore,
        plan: SegmentPlan,
    }

    impl SetModel for Broken {
        fn params(&self) -> &ParamStore {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.params
        }
        fn input_shape(&self) -> (usize, usize) {
            (1, 2)
        }
        fn output_shape(&self) -> (usize, usize) {
            (1, 2)
        }
        fn plan(&self) -> &SegmentPlan {
            &self.plan
        }
        fn forward(
            &self,
            tape: &mut Tape,
            _bind: &Binding,
            inputs: NodeId,
            _batch: usize,
            _ctx: &mut Forward<'_>,
        ) -> Result<NodeId> {
            let neg = tape.add_scalar(inputs, -1.0);
            Ok(tape.log(neg))
        }
    }

    #[test]
    fn nan_loss_names_the_first_bad_op() {
        let mut m = Broken { params: ParamStore::new(), plan: SegmentPlan::sigmoid(2).unwrap() };
        let data = Pairs { inputs: vec![Matrix::row_vector(&[0.0, 0.5])], targets: vec![Matrix::row_vector(&[0.0, 1.0])] };
        let err = train(&mut m, &data, &Pairs::default(), &TrainConfig::new(LossKind::Sce)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "log", .. }), "{err}");
    }
}
