use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;

use envaware_core::envsim::{generate_synthetic_task, load_task, write_task, SyntheticTaskSpec, TaskDataset};
use envaware_core::episode::{compare_strategies, curves_csv, run_condition, ConditionResult};
use envaware_core::fsio::write_atomic;
use envaware_core::irl::WeightsFile;
use envaware_core::rng::{split_seed, streams};
use envaware_core::stats::{mean_and_stderr, MannWhitney};
use envaware_core::trajectory::to_jsonl;
use envaware_core::{EpisodeConfig, Strategy, StrategyId};

use crate::args::{CompareArgs, ExperimentArgs, GenTaskArgs, RunArgs};

/// Wraps a command's resolved options for output metadata.
#[derive(Serialize)]
struct Meta<'a, T: Serialize> {
    v: u32,
    command: &'a str,
    args: &'a T,
}

pub fn write_meta<T: Serialize>(path: &Path, command: &str, args: &T) -> anyhow::Result<()> {
    let meta = Meta { v: 1, command, args };
    write_atomic(path, &serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn gen_task(a: &GenTaskArgs) -> anyhow::Result<()> {
    if !a.force && a.out.is_dir() && a.out.read_dir()?.next().is_some() {
        bail!("{} exists and is not empty; pass --force to overwrite", a.out.display());
    }
    let mut spec = SyntheticTaskSpec::new(a.concepts, a.dim, a.relevant, a.phases, a.instances_per_phase, a.seed);
    spec.test_per_phase = a.test_per_phase;
    spec.noise_sigma = a.noise;
    let ds = generate_synthetic_task(&spec)?;
    write_task(&a.out, &ds)?;
    write_meta(&a.out.join("gen-task.json"), "gen-task", a)?;
    println!(
        "wrote {} concepts, {} pool and {} test instances to {}",
        ds.concepts.len(),
        ds.pool.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn parse_strategies(names: &[String]) -> anyhow::Result<Vec<StrategyId>> {
    if names.iter().any(|n| n == "all") {
        return Ok(StrategyId::ALL.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        let id: StrategyId = n.trim().parse()?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    if out.is_empty() {
        bail!("no strategies selected");
    }
    Ok(out)
}

fn load_strategies(common: &ExperimentArgs) -> anyhow::Result<Vec<Strategy>> {
    let learned = match &common.weights {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let file: WeightsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Some(file.weight_vector()?)
        }
        None => None,
    };
    parse_strategies(&common.strategies)?
        .into_iter()
        .map(|id| match (&learned, id) {
            (Some(w), StrategyId::DtTaskEnv) => Ok(Strategy::with_weights(id, w.clone())?),
            _ => Ok(Strategy::baseline(id)),
        })
        .collect()
}

fn open_task(path: &Path) -> anyhow::Result<Arc<TaskDataset>> {
    Ok(Arc::new(load_task(path).with_context(|| format!("loading task {}", path.display()))?))
}

/// Episode seeds: `split_seed(base, EPISODE, i)` for i in 0..n.
pub fn episode_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| split_seed(base, streams::EPISODE, i)).collect()
}

struct Row {
    strategy: StrategyId,
    mean: f64,
    stderr: f64,
    queries: f64,
    test: Option<MannWhitney>,
}

/// Each strategy against the reference: dt-task-env when present, else the
/// first listed.
fn comparison(results: &[ConditionResult]) -> anyhow::Result<Vec<Row>> {
    let reference = results
        .iter()
        .find(|r| r.strategy == StrategyId::DtTaskEnv)
        .unwrap_or(&results[0]);
    results
        .iter()
        .map(|r| {
            let (mean, stderr) = mean_and_stderr(&r.final_accuracies());
            let test = if r.strategy == reference.strategy || r.trajectories.len() < 3 {
                None
            } else {
                Some(compare_strategies(reference, r)?)
            };
            Ok(Row {
                strategy: r.strategy,
                mean,
                stderr,
                queries: r.mean_queries(),
                test,
            })
        })
        .collect()
}

fn comparison_csv(reference: StrategyId, rows: &[Row]) -> String {
    let mut out = String::from("reference,strategy,mean_final_acc,std_err,mean_queries,u_statistic,p_value\n");
    for r in rows {
        let (u, p) = r
            .test
            .map_or((String::new(), String::new()), |t| (t.u_statistic.to_string(), t.p_value_one_tailed.to_string()));
        out.push_str(&format!(
            "{reference},{},{},{},{},{u},{p}\n",
            r.strategy, r.mean, r.stderr, r.queries
        ));
    }
    out
}

fn print_table(title: &str, rows: &[Row]) {
    println!("{title}");
    println!("  {:<12} {:>9} {:>8} {:>8} {:>9}", "strategy", "final", "stderr", "queries", "p");
    for r in rows {
        let p = r.test.map_or("-".to_string(), |t| format!("{:.4}", t.p_value_one_tailed));
        println!(
            "  {:<12} {:>9.4} {:>8.4} {:>8.1} {:>9}",
            r.strategy.as_str(),
            r.mean,
            r.stderr,
            r.queries,
            p
        );
    }
}

fn condition(
    ds: &Arc<TaskDataset>,
    strategies: &[Strategy],
    common: &ExperimentArgs,
    budget: u32,
    time: u32,
) -> anyhow::Result<Vec<ConditionResult>> {
    let base = EpisodeConfig::new(budget, time, common.change_period, StrategyId::DtTaskEnv, common.seed);
    base.validate()?;
    Ok(run_condition(ds.clone(), strategies, &base, &episode_seeds(common.seed, common.seeds))?)
}

pub fn run(a: &RunArgs) -> anyhow::Result<()> {
    let ds = open_task(&a.common.task)?;
    let strategies = load_strategies(&a.common)?;
    for &budget in &a.budgets {
        for &time in &a.times {
            let results = condition(&ds, &strategies, &a.common, budget, time)?;
            let dir = a.out.join(format!("b{budget}_t{time}"));
            write_atomic(&dir.join("curves.csv"), curves_csv(&results)?.as_bytes())?;
            for r in &results {
                let log = dir.join("logs").join(format!("{}.jsonl", r.strategy));
                write_atomic(&log, to_jsonl(&r.trajectories)?.as_bytes())?;
            }
            if results.len() >= 2 {
                let rows = comparison(&results)?;
                let reference = rows.iter().find(|r| r.test.is_none()).map_or(results[0].strategy, |r| r.strategy);
                write_atomic(&dir.join("comparison.csv"), comparison_csv(reference, &rows).as_bytes())?;
                print_table(&format!("budget {budget}, time {time}"), &rows);
            }
        }
    }
    write_meta(&a.out.join("run.json"), "run", a)?;
    Ok(())
}

pub fn compare(a: &CompareArgs) -> anyhow::Result<()> {
    let ds = open_task(&a.common.task)?;
    let strategies = load_strategies(&a.common)?;
    if strategies.len() < 2 {
        bail!("compare needs at least two strategies");
    }
    let results = condition(&ds, &strategies, &a.common, a.budget, a.time)?;
    print_table(&format!("budget {}, time {}", a.budget, a.time), &comparison(&results)?);
    Ok(())
}
