use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};

use envaware_core::envsim::load_task;
use envaware_core::fsio::write_atomic;
use envaware_core::irl::{synthetic_expert, train_weights, DemonstrationSet, ExpertSpec, IrlConfig, SoftmaxRollouts, WeightsFile};
use envaware_core::trajectory::{from_jsonl, to_jsonl};
use envaware_core::{EpisodeConfig, StrategyId, FEATURE_NAMES};

use crate::args::TrainIrlArgs;
use crate::experiment::write_meta;

fn sibling(out: &std::path::Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

pub fn train_irl(a: &TrainIrlArgs) -> anyhow::Result<()> {
    let ds = Arc::new(load_task(&a.task).with_context(|| format!("loading task {}", a.task.display()))?);
    let env = EpisodeConfig::new(a.budget, a.time, a.change_period, StrategyId::DtTaskEnv, a.seed);
    env.validate()?;

    let demos = if a.synthetic_expert {
        let set = synthetic_expert(ds.clone(), &env, &ExpertSpec::default(), a.expert_demos)?;
        if let Some(p) = &a.save_demos {
            write_atomic(p, to_jsonl(&set.trajectories)?.as_bytes())?;
        }
        set
    } else {
        let mut trajectories = Vec::new();
        for p in &a.demos {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading demonstrations {}", p.display()))?;
            trajectories.extend(from_jsonl(&p.display().to_string(), &text)?);
        }
        if trajectories.is_empty() {
            bail!("no demonstrations given");
        }
        DemonstrationSet::new(trajectories, env.clone())?
    };

    let defaults = IrlConfig::default();
    let irl = IrlConfig {
        max_iterations: a.max_iters,
        learning_rate: a.learning_rate,
        rollouts_per_iteration: a.rollouts.unwrap_or(defaults.rollouts_per_iteration),
        temperature: a.temperature.unwrap_or(defaults.temperature),
        validation_episodes: a.validation_episodes.unwrap_or(defaults.validation_episodes),
        seed: a.seed,
    };
    let mut sampler = SoftmaxRollouts::new(ds.clone(), &demos, irl.temperature, irl.seed);
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out, ".iterations.jsonl"));
    let mut log = String::new();
    let outcome = train_weights(&demos, &irl, ds, &mut sampler, |rec| {
        if let Ok(line) = serde_json::to_string(rec) {
            log.push_str(&line);
            log.push('\n');
        }
    });
    // The log is kept even when training fails part way.
    write_atomic(&log_path, log.as_bytes())?;
    let outcome = outcome?;

    let file = WeightsFile::new(&outcome.best_weights, &env, &irl, outcome.validation_accuracy)?;
    write_atomic(&a.out, &serde_json::to_vec_pretty(&file)?)?;
    write_meta(&sibling(&a.out, ".meta.json"), "train-irl", a)?;

    println!(
        "best iteration {} of {}, validation accuracy {:.4}",
        outcome.best_iteration, irl.max_iterations, outcome.validation_accuracy
    );
    for (name, w) in FEATURE_NAMES.iter().zip(outcome.best_weights.full()) {
        println!("  {name:<30} {w:>9.4}");
    }
    Ok(())
}
