use std::path::{Path, PathBuf};

use serde_json::json;
use setloss::datasets::clauses::{enumerate_clauses, head_width};
use setloss::datasets::{
    load_edge_list, load_setd, sample_states, write_csv, write_setd, BodyOrder, ClauseExample, KnowledgeGraph,
    SetDataset,
};
use setloss::experiments::{drop_and_pad, run_on, sample_clauses, Dataset, ExperimentConfig, Task};
use setloss::gradcheck::{run_suite, SuiteOptions};
use setloss::losses::{LossKind, ObjectSet};
use setloss::metrics::EvalReport;
use setloss::nets::save_checkpoint;

use crate::args::{describe, DataKind, GenDataArgs, GradcheckArgs, GridArgs, ModelArgs, ReplayArgs, TrainArgs};
use crate::error::CliError;
use crate::grid::{run_grid, GridSpec};
use crate::manifest::{hash_file, Recorder, RunManifest, MANIFEST_NAME};
use crate::pool::default_jobs;

fn setd_bytes(sets: Vec<setloss::autodiff::Matrix>) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_setd(&mut bytes, &SetDataset::new(sets)?)?;
    Ok(bytes)
}

fn csv_bytes(sets: &[setloss::autodiff::Matrix]) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_csv(&mut bytes, sets)?;
    Ok(bytes)
}

/// File names `gen-data` writes for a kind, and `--data` reads back.
fn file_stem(kind: DataKind) -> &'static str {
    match kind {
        DataKind::Puzzle => "puzzle",
        DataKind::PuzzleVariable => "puzzle-variable",
        DataKind::Rules => "rules",
    }
}

pub fn gen_data(a: &GenDataArgs, argv: &[String]) -> Result<(), CliError> {
    let rules = a.kind == DataKind::Rules;
    if !rules && (a.n.is_some() || a.edges.is_some() || a.synthetic || a.body_order.is_some()) {
        return Err(CliError::usage("--n, --edges, --synthetic and --body-order apply to rules only"));
    }
    if rules && a.solvable_only {
        return Err(CliError::usage("--solvable-only applies to puzzle data only"));
    }
    let stem = file_stem(a.kind);
    let mut rec = Recorder::new("gen-data", argv, a.seed, &a.out);
    let mut config = json!({ "kind": stem, "seed": a.seed });
    let count = match a.kind {
        DataKind::Puzzle | DataKind::PuzzleVariable => {
            let count = a.count.unwrap_or(ExperimentConfig::desk(Task::Puzzle, LossKind::Sce, 1, 0).count);
            let mut sets: Vec<ObjectSet> =
                sample_states(count, a.seed, a.solvable_only)?.iter().map(|s| s.encode()).collect();
            if a.kind == DataKind::PuzzleVariable {
                sets = drop_and_pad(&sets, a.seed)?;
            }
            let sets: Vec<_> = sets.into_iter().map(ObjectSet::into_matrix).collect();
            rec.write(&format!("{stem}.csv"), &csv_bytes(&sets)?)?;
            rec.write(&format!("{stem}.setd"), &setd_bytes(sets)?)?;
            config["count"] = json!(count);
            config["solvable_only"] = json!(a.solvable_only);
            count
        }
        DataKind::Rules => {
            let graph = match &a.edges {
                Some(path) => {
                    rec.input(path)?;
                    load_edge_list(path)?
                }
                None => KnowledgeGraph::synthetic_default(),
            };
            let n = a.n.unwrap_or(2);
            let order: BodyOrder = a.body_order.map_or(BodyOrder::Canonical, Into::into);
            let clauses = match a.count {
                Some(c) => sample_clauses(&graph, n, c, a.seed)?,
                None => enumerate_clauses(&graph, n)?,
            };
            let e = graph.entity_count();
            let heads: Vec<_> = clauses.iter().map(|c| c.head_matrix(e)).collect();
            let bodies: Vec<_> = clauses.iter().map(|c| c.body_matrix(e, order)).collect();
            rec.write("rules.edges", graph.to_edge_list().as_bytes())?;
            rec.write("rules.csv", &csv_bytes(&bodies)?)?;
            rec.write("rules-heads.setd", &setd_bytes(heads)?)?;
            rec.write("rules-bodies.setd", &setd_bytes(bodies)?)?;
            config["hops"] = json!(n);
            config["entities"] = json!(e);
            config["edges"] = json!(graph.edge_count());
            config["body_order"] = json!(format!("{order:?}").to_lowercase());
            config["count"] = json!(clauses.len());
            clauses.len()
        }
    };
    rec.finish(&format!("{stem}.{MANIFEST_NAME}"), config)?;
    println!("wrote {count} {stem} examples to {}", a.out.display());
    Ok(())
}

/// Reads the files `gen-data` wrote for the model's task.
fn load_dataset(dir: &Path, model: &ModelArgs, rec: &mut Recorder) -> Result<Dataset, CliError> {
    let stem = file_stem(model.task);
    let open = |name: &str, rec: &mut Recorder| -> Result<SetDataset, CliError> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(CliError::data(format!(
                "{} not found; run `setloss gen-data {stem} --out {}` first",
                path.display(),
                dir.display()
            )));
        }
        rec.input(&path)?;
        Ok(load_setd(&path)?)
    };
    if model.task != DataKind::Rules {
        let sets = open(&format!("{stem}.setd"), rec)?.sets;
        return Ok(Dataset { inputs: sets.clone(), targets: sets, clauses: Vec::new(), entities: 0 });
    }
    let heads = open("rules-heads.setd", rec)?;
    let bodies = open("rules-bodies.setd", rec)?;
    let hops = bodies.elements;
    if heads.len() != bodies.len() || hops == 0 || heads.features < 2 || (heads.features - 2) % (hops + 1) != 0 {
        return Err(CliError::data("clause head and body files do not match"));
    }
    let entities = (heads.features - 2) / (hops + 1);
    if head_width(hops, entities) != heads.features || model.n.is_some_and(|n| n != hops) {
        return Err(CliError::data(format!("clause files hold {hops}-hop bodies")));
    }
    let clauses = heads
        .sets
        .iter()
        .map(|h| ClauseExample::decode_head(h.row(0), hops, entities))
        .collect::<setloss::Result<Vec<_>>>()?;
    Ok(Dataset { inputs: heads.sets, targets: bodies.sets, clauses, entities })
}

fn eval_reports(cfg: &ExperimentConfig, o: &setloss::experiments::Outcome) -> Vec<EvalReport> {
    let report = |split: &str, ratio: f64, n: usize| EvalReport {
        loss: cfg.loss,
        scenario: cfg.scenario,
        seed: cfg.seed,
        split: split.to_owned(),
        successes: (ratio * n as f64).round() as usize,
        evaluated: n,
    };
    vec![
        report("all", o.success_all, o.evaluated_all),
        report("train", o.success_train, o.evaluated_train),
        report("test", o.success_test, o.evaluated_test),
    ]
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let cfg = a.model.experiment(a.loss, a.scenario, a.seed)?;
    cfg.scenario_config()?;
    let mut rec = Recorder::new("train", argv, a.seed, &a.out);
    let data = match &a.model.data {
        Some(dir) => load_dataset(dir, &a.model, &mut rec)?,
        None => setloss::experiments::build_dataset(&cfg)?,
    };
    eprintln!("training {} on {} ({} examples, scenario {})", cfg.loss, cfg.task, data.len(), cfg.scenario);
    let (model, outcome) = run_on(&cfg, &data)?;

    std::fs::create_dir_all(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    save_checkpoint(a.out.join("model.setm"), model.as_dyn().params(), None)?;
    rec.written("model.setm");
    rec.write("trace.csv", outcome.report.to_csv().as_bytes())?;
    let reports = eval_reports(&cfg, &outcome);
    let mut csv = String::from("loss,scenario,seed,split,successes,evaluated,ratio\n");
    let mut md = String::from("| loss | scenario | split | success |\n|---|---|---|---|\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.loss.name(),
            r.scenario,
            r.seed,
            r.split,
            r.successes,
            r.evaluated,
            r.ratio()
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {}/{} = {:.3} |\n",
            r.loss.table_label(),
            r.scenario,
            r.split,
            r.successes,
            r.evaluated,
            r.ratio()
        ));
    }
    rec.write("eval.csv", csv.as_bytes())?;
    rec.write("eval.md", md.as_bytes())?;
    let mut config = describe(&cfg);
    config["count"] = json!(data.len());
    rec.finish(MANIFEST_NAME, config)?;
    for r in &reports {
        println!("{r}");
    }
    println!("best epoch {}, final training loss {:.6}", outcome.report.best_epoch, outcome.report.final_train_loss());
    Ok(())
}

pub fn grid(a: &GridArgs, argv: &[String]) -> Result<(), CliError> {
    let jobs = a.jobs.unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let mut rec = Recorder::new("grid", argv, a.seed, &a.out);
    let data = match &a.model.data {
        Some(dir) => Some(load_dataset(dir, &a.model, &mut rec)?),
        None => None,
    };
    let spec = GridSpec {
        model: a.model.clone(),
        losses: a.losses.clone(),
        scenarios: a.scenarios.clone(),
        runs: a.runs,
        seed: a.seed,
        data,
    };
    let result = run_grid(&spec, jobs, &|c| match &c.result {
        Ok(r) => eprintln!("{:>10} scenario {} run {}: {:.3}", c.loss.name(), c.scenario, c.run, r.headline),
        Err(e) => eprintln!("{:>10} scenario {} run {}: failed: {e}", c.loss.name(), c.scenario, c.run),
    })?;
    for c in &result.cells {
        if let Ok(r) = &c.result {
            rec.write(&format!("cells/{}/trace.csv", c.slug()), r.trace_csv.as_bytes())?;
        }
    }
    let md = result.to_markdown();
    rec.write("grid.md", md.as_bytes())?;
    rec.write("grid.csv", result.runs_csv().as_bytes())?;
    rec.write("grid_summary.csv", result.summary_csv().as_bytes())?;
    let base = spec.model.experiment(spec.losses[0], result.scenarios[0], a.seed)?;
    let mut config = describe(&base);
    let obj = config.as_object_mut().expect("object");
    for key in ["loss", "scenario", "seed"] {
        obj.remove(key);
    }
    config["losses"] = json!(spec.losses.iter().map(|l| l.name()).collect::<Vec<_>>());
    config["scenarios"] = json!(result.scenarios);
    config["runs"] = json!(a.runs);
    config["base_seed"] = json!(a.seed);
    rec.finish(MANIFEST_NAME, config)?;
    println!("{md}");
    let failed = result.failures().count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see grid.csv", result.cells.len());
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, argv: &[String]) -> Result<(), CliError> {
    let opts = SuiteOptions {
        seed: a.seed,
        graphs: a.graphs,
        loss_points: a.loss_points,
        inject_faulty_op: a.inject_faulty_op,
        ..SuiteOptions::default()
    };
    let results = run_suite(&opts)?;
    let mut report = String::new();
    for r in &results {
        if a.verbose || !r.passed() {
            report.push_str(&format!("{r}\n"));
        }
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let compared: usize = results.iter().map(|r| r.compared).sum();
    let excused: usize = results.iter().map(|r| r.excused).sum();
    report.push_str(&format!(
        "{} checks, {failed} failed; {compared} entries compared, {excused} excused at kinks\n",
        results.len()
    ));
    print!("{report}");
    if let Some(out) = &a.out {
        let mut rec = Recorder::new("gradcheck", argv, a.seed, out);
        rec.write("gradcheck.txt", report.as_bytes())?;
        let config = json!({
            "seed": a.seed,
            "graphs": a.graphs,
            "loss_points": a.loss_points,
            "inject_faulty_op": a.inject_faulty_op,
            "step": opts.tolerance.step,
            "rel": opts.tolerance.rel,
            "abs_floor": opts.tolerance.abs_floor,
        });
        rec.finish(MANIFEST_NAME, config)?;
    }
    if failed > 0 {
        let names: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        return Err(CliError::numeric(format!("gradient check failed: {}", names.join(", "))));
    }
    Ok(())
}

/// `argv` with its output directory replaced by `out`.
fn retarget(argv: &[String], out: &Path) -> Vec<String> {
    let mut args = Vec::with_capacity(argv.len() + 2);
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            args.push(a.clone());
        }
    }
    args.push("--out".into());
    args.push(out.display().to_string());
    args
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let manifest = RunManifest::load(&a.manifest)?;
    for (path, hash) in &manifest.inputs {
        let now = hash_file(&PathBuf::from(path))?;
        if &now != hash {
            return Err(CliError::data(format!("{path} changed since the recorded run")));
        }
    }
    if manifest.argv.first().map(String::as_str) == Some("replay") {
        return Err(CliError::usage("a replay manifest cannot be replayed"));
    }
    crate::dispatch(retarget(&manifest.argv, &a.out))
}
