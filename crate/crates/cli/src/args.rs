use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use setloss::datasets::BodyOrder;
use setloss::experiments::{ExperimentConfig, Task};
use setloss::losses::LossKind;
use setloss::nets::{LatentMode, TemperatureSchedule};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "setloss", version, about = "Set reconstruction and rule learning with permutation-invariant losses")]
#[command(after_help = "Any flag may also come from `--config <file>` holding `key = value` lines; \
                        flags given on the command line win.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset as SETD files plus CSV for inspection.
    GenData(GenDataArgs),
    /// Train and evaluate one model.
    Train(TrainArgs),
    /// Train every loss on every scenario several times and tabulate success.
    Grid(GridArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the command recorded in a manifest again, writing to a new directory.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Puzzle,
    PuzzleVariable,
    Rules,
}

impl DataKind {
    pub fn task(self) -> Task {
        match self {
            DataKind::Puzzle => Task::Puzzle,
            DataKind::PuzzleVariable => Task::PuzzleVariable,
            DataKind::Rules => Task::Rules,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Chain,
    Canonical,
}

impl From<OrderArg> for BodyOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Chain => BodyOrder::Chain,
            OrderArg::Canonical => BodyOrder::Canonical,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    pub kind: DataKind,
    /// Sets to draw; rules default to every clause of the graph.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Draw only states reachable from the solved puzzle.
    #[arg(long)]
    pub solvable_only: bool,
    /// Hops per clause body (rules only).
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge list with one `a b` pair per line (rules only).
    #[arg(long, conflicts_with = "synthetic")]
    pub edges: Option<PathBuf>,
    /// Use the built-in 163-entity map (rules only; the default).
    #[arg(long)]
    pub synthetic: bool,
    /// Row order of the encoded clause bodies (rules only).
    #[arg(long, value_enum)]
    pub body_order: Option<OrderArg>,
}

/// Model, data and optimization settings shared by `train` and `grid`.
#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "puzzle")]
    pub task: DataKind,
    /// Directory written by `gen-data`; without it the data are generated in memory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Full-size data and widths instead of the small defaults.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    /// gumbel, gumbel-<k>, sigmoid or none.
    #[arg(long)]
    pub latent_mode: Option<LatentMode>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub no_batchnorm: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub temperature_start: Option<f64>,
    #[arg(long)]
    pub temperature_end: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Hops per clause body (rules only).
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge list for the rule task instead of the built-in map.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub body_order: Option<OrderArg>,
}

impl ModelArgs {
    /// No overrides: the task's small-budget defaults.
    pub fn defaults(task: DataKind) -> Self {
        Self {
            task,
            data: None,
            paper_scale: false,
            count: None,
            data_seed: None,
            epochs: None,
            width: None,
            latent: None,
            latent_mode: None,
            dropout: None,
            no_batchnorm: false,
            batch_size: None,
            lr: None,
            temperature_start: None,
            temperature_end: None,
            val_fraction: None,
            test_fraction: None,
            n: None,
            edges: None,
            body_order: None,
        }
    }

    pub fn experiment(&self, loss: LossKind, scenario: u8, seed: u64) -> Result<ExperimentConfig, CliError> {
        let task = self.task.task();
        let mut cfg = if self.paper_scale {
            ExperimentConfig::paper(task, loss, scenario, seed)
        } else {
            ExperimentConfig::desk(task, loss, scenario, seed)
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(count, data_seed, epochs, width, latent, latent_mode, dropout, batch_size, lr, val_fraction, test_fraction);
        if self.no_batchnorm {
            cfg.batchnorm = false;
        }
        let defaults = TemperatureSchedule::default();
        cfg.temperature = TemperatureSchedule {
            start: self.temperature_start.unwrap_or(defaults.start),
            end: self.temperature_end.unwrap_or(defaults.end),
        };
        if let Some(o) = self.body_order {
            cfg.body_order = o.into();
        }
        if task == Task::Rules {
            if let Some(n) = self.n {
                cfg.hops = n;
            }
            if let Some(path) = &self.edges {
                cfg.graph = Some(setloss::datasets::load_edge_list(path)?);
            }
        } else if self.n.is_some() || self.edges.is_some() || self.body_order.is_some() {
            return Err(CliError::usage("--n, --edges and --body-order apply to the rules task only"));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.width == 0 {
            return Err(CliError::usage("epochs, batch size and width must be positive"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) || !(cfg.lr > 0.0) {
            return Err(CliError::usage("dropout must lie in [0, 1) and the learning rate must be positive"));
        }
        if !(cfg.temperature.start > 0.0 && cfg.temperature.end > 0.0) {
            return Err(CliError::usage("temperatures must be positive"));
        }
        Ok(cfg)
    }
}

/// Settings echoed into manifests.
pub fn describe(cfg: &ExperimentConfig) -> serde_json::Value {
    json!({
        "task": cfg.task.name(),
        "loss": cfg.loss.name(),
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "data_seed": cfg.data_seed,
        "count": cfg.count,
        "test_fraction": cfg.test_fraction,
        "val_fraction": cfg.val_fraction,
        "width": cfg.width,
        "latent": cfg.latent,
        "latent_mode": cfg.latent_mode.to_string(),
        "dropout": cfg.dropout,
        "batchnorm": cfg.batchnorm,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "temperature_start": cfg.temperature.start,
        "temperature_end": cfg.temperature.end,
        "hops": cfg.hops,
        "body_order": format!("{:?}", cfg.body_order).to_lowercase(),
        "graph": cfg.graph.as_ref().map_or("synthetic".to_owned(), |g| format!("{} entities", g.entity_count())),
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// ce, sce, avg, avg-sum or hausdorff.
    #[arg(long, default_value = "sce")]
    pub loss: LossKind,
    /// 1 fixed/fixed, 2 shuffled inputs, 3 shuffled targets, 4 both.
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 2)]
    pub runs: usize,
    /// Run `r` of every cell uses seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "ce,sce,avg,hausdorff")]
    pub losses: Vec<LossKind>,
    /// Defaults to every scenario the task defines.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<u8>,
    /// Parallel training runs.
    #[arg(long, env = "SETLOSS_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "runs/grid")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    #[arg(long, default_value_t = 100)]
    pub loss_points: usize,
    /// Print every check, not only failures.
    #[arg(long)]
    pub verbose: bool,
    /// Write a report and manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add a custom op with a deliberately wrong backward.
    #[arg(long, hide = true)]
    pub inject_faulty_op: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
