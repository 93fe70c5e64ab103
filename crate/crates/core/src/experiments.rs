//! End-to-end runs: build a dataset, train one model, evaluate it.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::datasets::clauses::{enumerate_clauses, BodyOrder, ClauseExample};
use crate::datasets::graph::KnowledgeGraph;
use crate::datasets::padding::{drop_elements, pad_with_dummies};
use crate::datasets::puzzle::{sample_states, PUZZLE_FEATURES, SIDE, TILES};
use crate::datasets::scenario::{arrange_pairs, Pairs, RowOrder, ScenarioConfig};
use crate::error::{Error, Result};
use crate::losses::{LossKind, ObjectSet};
use crate::metrics::{model_rule_accuracy, reconstruction_success};
use crate::nets::{
    predict, train, AdamConfig, AutoencoderConfig, LatentMode, RuleNet, RuleNetConfig, SegmentPlan, SetAutoencoder, SetModel,
    TemperatureSchedule, TrainConfig, TrainReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Puzzle,
    PuzzleVariable,
    Rules,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Puzzle, Task::PuzzleVariable, Task::Rules];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Puzzle => "puzzle",
            Task::PuzzleVariable => "puzzle-variable",
            Task::Rules => "rules",
        }
    }

    /// Scenarios that make sense for the task. Rule inputs are single
    /// vectors, so only the target order varies.
    pub fn scenarios(&self) -> &'static [u8] {
        match self {
            Task::Rules => &[1, 3],
            _ => &[1, 2, 3, 4],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub loss: LossKind,
    pub scenario: u8,
    /// Seeds initialization, shuffling and noise; the data stay fixed.
    pub seed: u64,
    pub data_seed: u64,
    /// Sets (or clauses) drawn before splitting.
    pub count: usize,
    pub test_fraction: f64,
    /// Share of the training part held out for best-epoch selection.
    pub val_fraction: f64,
    pub width: usize,
    pub latent: usize,
    pub latent_mode: LatentMode,
    pub dropout: f64,
    pub batchnorm: bool,
    /// Epoch budget of unshuffled scenarios; shuffled ones divide it by
    /// the repetition factor.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: TemperatureSchedule,
    pub hops: usize,
    pub body_order: BodyOrder,
    /// Edge list for the rule task; `None` uses the synthetic map.
    pub graph: Option<KnowledgeGraph>,
}

impl ExperimentConfig {
    /// Small-budget defaults. The puzzle autoencoders run without latent
    /// noise and dropout: with 500 training sets and 30 epochs neither loss
    /// learns anything through the annealed binary latent.
    pub fn desk(task: Task, loss: LossKind, scenario: u8, seed: u64) -> Self {
        let (count, width) = match task {
            Task::Rules => (2500, 400),
            _ => (555, 300),
        };
        let (latent_mode, dropout) = match task {
            Task::Rules => (LatentMode::GumbelBinary, 0.5),
            _ => (LatentMode::None, 0.0),
        };
        Self {
            task,
            loss,
            scenario,
            seed,
            data_seed: 0,
            count,
            test_fraction: 0.1,
            val_fraction: 0.1,
            width,
            latent: 100,
            latent_mode,
            dropout,
            batchnorm: true,
            epochs: 30,
            batch_size: 100,
            lr: AdamConfig::default().lr,
            temperature: TemperatureSchedule::default(),
            hops: 2,
            body_order: BodyOrder::Canonical,
            graph: None,
        }
    }

    /// Dataset sizes, widths and latent layer of the original experiments.
    pub fn paper(task: Task, loss: LossKind, scenario: u8, seed: u64) -> Self {
        let mut cfg = Self::desk(task, loss, scenario, seed);
        if task != Task::Rules {
            cfg.count = 5000;
            cfg.width = 1000;
            cfg.latent_mode = LatentMode::GumbelBinary;
            cfg.dropout = 0.5;
        }
        cfg
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        if !self.task.scenarios().contains(&self.scenario) {
            return Err(Error::invalid(format!(
                "scenario {} is not defined for the {} task",
                self.scenario, self.task
            )));
        }
        ScenarioConfig::numbered(self.scenario, self.seed)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let scenario = self.scenario_config()?;
        let mut cfg = TrainConfig::new(self.loss);
        cfg.epochs = scenario.scaled_epochs(self.epochs);
        cfg.batch_size = self.batch_size;
        cfg.adam.lr = self.lr;
        cfg.temperature = self.temperature;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

/// Examples of one experiment before scenario expansion.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<Matrix>,
    /// Clauses behind the examples, for the rule task.
    pub clauses: Vec<ClauseExample>,
    pub entities: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn range(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            inputs: self.inputs[start..end].to_vec(),
            targets: self.targets[start..end].to_vec(),
            clauses: self.clauses.get(start..end).map_or_else(Vec::new, <[_]>::to_vec),
            entities: self.entities,
        }
    }
}

/// Train, validation and test parts; all of them carry unshuffled rows.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn puzzle_plan() -> SegmentPlan {
    SegmentPlan::softmax_blocks(&[TILES, SIDE, SIDE]).expect("fixed plan")
}

/// Padded sets mix one-hot rows and counter-coded dummies, so every
/// column is activated independently.
pub fn puzzle_variable_plan() -> SegmentPlan {
    SegmentPlan::sigmoid(PUZZLE_FEATURES + 1).expect("fixed plan")
}

pub fn puzzle_sets(count: usize, seed: u64) -> Result<Vec<ObjectSet>> {
    Ok(sample_states(count, seed, false)?.iter().map(|s| s.encode()).collect())
}

pub fn puzzle_variable_sets(count: usize, seed: u64) -> Result<Vec<ObjectSet>> {
    drop_and_pad(&puzzle_sets(count, seed)?, seed)
}

/// Drops elements by the geometric plan and pads back to nine rows.
pub fn drop_and_pad(sets: &[ObjectSet], seed: u64) -> Result<Vec<ObjectSet>> {
    drop_elements(sets, seed)?.iter().map(|s| pad_with_dummies(s, TILES)).collect()
}

/// `count` clauses drawn uniformly without replacement, in random order.
pub fn sample_clauses(g: &KnowledgeGraph, hops: usize, count: usize, seed: u64) -> Result<Vec<ClauseExample>> {
    let all = enumerate_clauses(g, hops)?;
    if count > all.len() {
        return Err(Error::invalid(format!("{count} clauses requested, the graph has {}", all.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, all.len(), count).iter().map(|i| all[i].clone()).collect())
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.task {
        Task::Puzzle | Task::PuzzleVariable => {
            let sets = if cfg.task == Task::Puzzle {
                puzzle_sets(cfg.count, cfg.data_seed)?
            } else {
                puzzle_variable_sets(cfg.count, cfg.data_seed)?
            };
            let m: Vec<Matrix> = sets.into_iter().map(ObjectSet::into_matrix).collect();
            Ok(Dataset { inputs: m.clone(), targets: m, clauses: Vec::new(), entities: 0 })
        }
        Task::Rules => {
            let g = cfg.graph.clone().unwrap_or_else(KnowledgeGraph::synthetic_default);
            let e = g.entity_count();
            let clauses = sample_clauses(&g, cfg.hops, cfg.count, cfg.data_seed)?;
            Ok(Dataset {
                inputs: clauses.iter().map(|c| c.head_matrix(e)).collect(),
                targets: clauses.iter().map(|c| c.body_matrix(e, cfg.body_order)).collect(),
                clauses,
                entities: e,
            })
        }
    }
}

/// Test part first taken from the end, then validation from the end of the rest.
pub fn split(data: &Dataset, test_fraction: f64, val_fraction: f64) -> Result<Splits> {
    for f in [test_fraction, val_fraction] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::invalid(format!("split fraction {f} outside [0, 1)")));
        }
    }
    let n = data.len();
    let test = (n as f64 * test_fraction).floor() as usize;
    let rest = n - test;
    let val = (rest as f64 * val_fraction).floor() as usize;
    let fit = rest - val;
    if fit == 0 {
        return Err(Error::invalid("no examples left for training"));
    }
    Ok(Splits {
        train: data.range(0, fit),
        val: data.range(fit, rest),
        test: data.range(rest, n),
    })
}

pub enum Model {
    Autoencoder(SetAutoencoder),
    Rule(RuleNet),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn SetModel {
        match self {
            Model::Autoencoder(m) => m,
            Model::Rule(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn SetModel {
        match self {
            Model::Autoencoder(m) => m,
            Model::Rule(m) => m,
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model> {
    match cfg.task {
        Task::Puzzle | Task::PuzzleVariable => {
            let (plan, features) = if cfg.task == Task::Puzzle {
                (puzzle_plan(), PUZZLE_FEATURES)
            } else {
                (puzzle_variable_plan(), PUZZLE_FEATURES + 1)
            };
            let mut ac = AutoencoderConfig::new(TILES, features, plan);
            ac.width = cfg.width;
            ac.latent = cfg.latent;
            ac.latent_mode = cfg.latent_mode;
            ac.dropout = cfg.dropout;
            ac.batchnorm = cfg.batchnorm;
            ac.seed = cfg.seed;
            Ok(Model::Autoencoder(SetAutoencoder::new(ac)?))
        }
        Task::Rules => {
            let mut rc = RuleNetConfig::new(cfg.hops, data.entities);
            rc.width = cfg.width;
            rc.dropout = cfg.dropout;
            rc.batchnorm = cfg.batchnorm;
            rc.seed = cfg.seed;
            Ok(Model::Rule(RuleNet::new(rc)?))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: TrainReport,
    /// Success over every generated example (train, validation and test).
    pub success_all: f64,
    pub success_train: f64,
    pub success_test: f64,
    pub evaluated_all: usize,
    pub evaluated_train: usize,
    pub evaluated_test: usize,
}

impl Outcome {
    /// The figure reported for the task: all examples for reconstruction,
    /// held-out clauses for rules.
    pub fn headline(&self, task: Task) -> f64 {
        match task {
            Task::Rules => self.success_test,
            _ => self.success_all,
        }
    }
}

fn success_fraction(model: &dyn SetModel, data: &Dataset, temperature: f64) -> Result<(usize, usize)> {
    if data.is_empty() {
        return Ok((0, 0));
    }
    if !data.clauses.is_empty() {
        let acc = model_rule_accuracy(model, &data.clauses, data.entities, temperature)?;
        return Ok(((acc * data.len() as f64).round() as usize, data.len()));
    }
    let outputs = predict(model, &data.inputs, temperature)?;
    let mut hits = 0;
    for (x, y) in data.targets.iter().zip(&outputs) {
        hits += usize::from(reconstruction_success(x, y, model.plan())?);
    }
    Ok((hits, data.len()))
}

fn ratio((hits, n): (usize, usize)) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Expands the splits according to the scenario and trains `model`.
pub fn fit(cfg: &ExperimentConfig, model: &mut Model, splits: &Splits) -> Result<TrainReport> {
    let scenario = cfg.scenario_config()?;
    let train_pairs = arrange_pairs(&splits.train.inputs, &splits.train.targets, &scenario)?;
    let val_cfg = ScenarioConfig { seed: scenario.seed.wrapping_add(1), ..scenario };
    let val_pairs = arrange_pairs(&splits.val.inputs, &splits.val.targets, &val_cfg)?;
    train(model.as_dyn_mut(), &train_pairs, &val_pairs, &cfg.train_config()?)
}

pub fn evaluate(cfg: &ExperimentConfig, model: &Model, splits: &Splits, report: TrainReport) -> Result<Outcome> {
    let t = cfg.temperature.end;
    let m = model.as_dyn();
    let tr = success_fraction(m, &splits.train, t)?;
    let va = success_fraction(m, &splits.val, t)?;
    let te = success_fraction(m, &splits.test, t)?;
    let all = (tr.0 + va.0 + te.0, tr.1 + va.1 + te.1);
    Ok(Outcome {
        report,
        success_all: ratio(all),
        success_train: ratio(tr),
        success_test: ratio(te),
        evaluated_all: all.1,
        evaluated_train: tr.1,
        evaluated_test: te.1,
    })
}

/// Builds data and model, trains and evaluates.
pub fn run(cfg: &ExperimentConfig) -> Result<(Model, Outcome)> {
    run_on(cfg, &build_dataset(cfg)?)
}

/// Like [`run`] on a dataset loaded elsewhere; `cfg.count` is ignored.
pub fn run_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Model, Outcome)> {
    let splits = split(data, cfg.test_fraction, cfg.val_fraction)?;
    let mut model = build_model(cfg, data)?;
    let report = fit(cfg, &mut model, &splits)?;
    let outcome = evaluate(cfg, &model, &splits, report)?;
    Ok((model, outcome))
}

/// Training pairs as the scenario presents them, for export.
pub fn scenario_pairs(cfg: &ExperimentConfig) -> Result<Pairs> {
    let data = build_dataset(cfg)?;
    let splits = split(&data, cfg.test_fraction, cfg.val_fraction)?;
    arrange_pairs(&splits.train.inputs, &splits.train.targets, &cfg.scenario_config()?)
}

/// Row orders of a numbered scenario, for display.
pub fn scenario_orders(index: u8) -> Result<(RowOrder, RowOrder)> {
    let s = ScenarioConfig::numbered(index, 0)?;
    Ok((s.input_order, s.target_order))
}
