//! Loss by scenario grids: every cell trained several times.

use std::fmt::Write as _;

use setloss::experiments::{run_on, Dataset, Task};
use setloss::losses::LossKind;

use crate::args::ModelArgs;
use crate::error::CliError;
use crate::pool::run_indexed;

/// Numbers kept from one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// Success on every example for reconstruction, held-out accuracy for rules.
    pub headline: f64,
    pub success_train: f64,
    pub success_test: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
    pub trace_csv: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub loss: LossKind,
    pub scenario: u8,
    pub run: usize,
    pub seed: u64,
    pub result: Result<RunSummary, String>,
}

impl CellRun {
    /// Directory name of the run's files.
    pub fn slug(&self) -> String {
        format!("{}-s{}-r{}", self.loss.name(), self.scenario, self.run)
    }
}

pub struct GridSpec {
    pub model: ModelArgs,
    pub losses: Vec<LossKind>,
    pub scenarios: Vec<u8>,
    pub runs: usize,
    pub seed: u64,
    /// Loaded data; generated from the model settings when absent.
    pub data: Option<Dataset>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub task: Task,
    pub losses: Vec<LossKind>,
    pub scenarios: Vec<u8>,
    pub runs: usize,
    pub cells: Vec<CellRun>,
}

/// Population mean and standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

impl GridResult {
    fn successes(&self, loss: LossKind, scenario: u8) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.loss == loss && c.scenario == scenario)
            .filter_map(|c| c.result.as_ref().ok().map(|r| r.headline))
            .collect()
    }

    /// Best success over the runs that finished.
    pub fn best(&self, loss: LossKind, scenario: u8) -> Option<f64> {
        self.successes(loss, scenario).into_iter().reduce(f64::max)
    }

    pub fn mean_std(&self, loss: LossKind, scenario: u8) -> Option<(f64, f64)> {
        let v = self.successes(loss, scenario);
        (!v.is_empty()).then(|| mean_std(&v))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellRun> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("loss,scenario,run,seed,success,success_train,success_test,final_loss,best_epoch,error\n");
        for c in &self.cells {
            let _ = match &c.result {
                Ok(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},",
                    c.loss.name(),
                    c.scenario,
                    c.run,
                    c.seed,
                    r.headline,
                    r.success_train,
                    r.success_test,
                    r.final_loss,
                    r.best_epoch
                ),
                Err(e) => writeln!(out, "{},{},{},{},,,,,,\"{}\"", c.loss.name(), c.scenario, c.run, c.seed, e.replace('"', "'")),
            };
        }
        out
    }

    /// Best and mean plus or minus standard deviation per cell.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("loss,scenario,best,mean,std,finished\n");
        for &loss in &self.losses {
            for &s in &self.scenarios {
                let n = self.successes(loss, s).len();
                let (best, (mean, std)) = match (self.best(loss, s), self.mean_std(loss, s)) {
                    (Some(b), Some(ms)) => (b.to_string(), (ms.0.to_string(), ms.1.to_string())),
                    _ => (String::new(), (String::new(), String::new())),
                };
                let _ = writeln!(out, "{},{s},{best},{mean},{std},{n}", loss.name());
            }
        }
        out
    }

    /// Rows are losses, columns scenarios; each cell reads `best (mean ± std)`.
    pub fn to_markdown(&self) -> String {
        let label = |s: u8| match s {
            1 => "(1) fixed/fixed",
            2 => "(2) random/fixed",
            3 => "(3) fixed/random",
            _ => "(4) random/random",
        };
        let mut out = format!("{} success, best of {} runs (mean ± std)\n\n| loss |", self.task, self.runs);
        for &s in &self.scenarios {
            let _ = write!(out, " {} |", label(s));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.scenarios.len()));
        out.push('\n');
        for &loss in &self.losses {
            let _ = write!(out, "| {} |", loss.table_label());
            for &s in &self.scenarios {
                match (self.best(loss, s), self.mean_std(loss, s)) {
                    (Some(b), Some((m, sd))) => {
                        let _ = write!(out, " {b:.3} ({m:.3} ± {sd:.3}) |");
                    }
                    _ => out.push_str(" failed |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains every (loss, scenario, run) cell on up to `jobs` threads.
/// Runs that fail are recorded in their cell. `on_done` sees each run as
/// it finishes.
pub fn run_grid(spec: &GridSpec, jobs: usize, on_done: &(dyn Fn(&CellRun) + Sync)) -> Result<GridResult, CliError> {
    let task = spec.model.task.task();
    if spec.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let scenarios = if spec.scenarios.is_empty() { task.scenarios().to_vec() } else { spec.scenarios.clone() };
    if spec.losses.is_empty() {
        return Err(CliError::usage("no losses given"));
    }
    let mut plan = Vec::new();
    for &loss in &spec.losses {
        for &scenario in &scenarios {
            for run in 0..spec.runs {
                let seed = spec.seed.wrapping_add(run as u64);
                // invalid settings fail here, before any training
                plan.push((spec.model.experiment(loss, scenario, seed)?, run));
                plan.last().unwrap().0.scenario_config()?;
            }
        }
    }
    let generated;
    let data = match &spec.data {
        Some(d) => d,
        None => {
            generated = setloss::experiments::build_dataset(&plan[0].0)?;
            &generated
        }
    };
    let cells = run_indexed(plan.len(), jobs, |i| {
        let (cfg, run) = &plan[i];
        let result = run_on(cfg, data)
            .map(|(_, o)| RunSummary {
                headline: o.headline(task),
                success_train: o.success_train,
                success_test: o.success_test,
                final_loss: o.report.final_train_loss(),
                best_epoch: o.report.best_epoch,
                trace_csv: o.report.to_csv(),
            })
            .map_err(|e| e.to_string());
        let cell = CellRun { loss: cfg.loss, scenario: cfg.scenario, run: *run, seed: cfg.seed, result };
        on_done(&cell);
        cell
    });
    Ok(GridResult { task, losses: spec.losses.clone(), scenarios, runs: spec.runs, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(loss: LossKind, scenario: u8, run: usize, v: Option<f64>) -> CellRun {
        CellRun {
            loss,
            scenario,
            run,
            seed: run as u64,
            result: v
                .map(|h| RunSummary {
                    headline: h,
                    success_train: h,
                    success_test: h,
                    final_loss: 1.0,
                    best_epoch: 1,
                    trace_csv: String::new(),
                })
                .ok_or_else(|| "diverged".to_owned()),
        }
    }

    #[test]
    fn tables_summarize_runs() {
        let g = GridResult {
            task: Task::Puzzle,
            losses: vec![LossKind::FlattenedCe, LossKind::Sce],
            scenarios: vec![1, 3],
            runs: 2,
            cells: vec![
                cell(LossKind::FlattenedCe, 1, 0, Some(1.0)),
                cell(LossKind::FlattenedCe, 1, 1, Some(0.5)),
                cell(LossKind::FlattenedCe, 3, 0, None),
                cell(LossKind::FlattenedCe, 3, 1, None),
                cell(LossKind::Sce, 1, 0, Some(0.25)),
                cell(LossKind::Sce, 1, 1, Some(0.75)),
                cell(LossKind::Sce, 3, 0, Some(0.5)),
                cell(LossKind::Sce, 3, 1, None),
            ],
        };
        assert_eq!(g.best(LossKind::FlattenedCe, 1), Some(1.0));
        assert_eq!(g.mean_std(LossKind::Sce, 1), Some((0.5, 0.25)));
        assert_eq!(g.best(LossKind::FlattenedCe, 3), None);
        assert_eq!(g.failures().count(), 3);
        assert_eq!(g.runs_csv().lines().count(), 1 + 2 * 2 * 2);
        let md = g.to_markdown();
        assert!(md.contains("| (a) H | 1.000 (0.750 ± 0.250) | failed |"), "{md}");
        assert!(md.contains("| (b) SH | 0.750 (0.500 ± 0.250) | 0.500 (0.500 ± 0.000) |"), "{md}");
        assert!(g.summary_csv().contains("ce,3,,,,0"));
    }
}
