use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DemonstrationSet;
use crate::domain::{ActionKind, EpisodeConfig};
use crate::envsim::{SimulatedTeacher, TaskDataset};
use crate::episode::Stepper;
use crate::error::Result;
use crate::features::NUM_FEATURES;
use crate::rng::{split_seed, streams};
use crate::strategies::StrategyId;
use crate::trajectory::Trajectory;

/// A scripted questioner: the greedy expected-utility policy under known
/// weights, plus an optional deadline by which the feature subset is
/// requested if the greedy choice has not asked for it yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExpertSpec {
    pub weights: [f64; NUM_FEATURES],
    pub fsq_deadline: Option<u32>,
}

impl Default for ExpertSpec {
    fn default() -> Self {
        ExpertSpec {
            weights: [-0.15, 0.15, -0.55, 0.45, -0.55, 0.0, -0.25],
            fsq_deadline: Some(5),
        }
    }
}

pub fn expert_action(stepper: &mut Stepper, spec: &ExpertSpec) -> Result<ActionKind> {
    let fsq = ActionKind::FeatureSubsetQuery;
    if let Some(deadline) = spec.fsq_deadline {
        let open = stepper.candidates().iter().any(|c| c.kind == fsq);
        if open && stepper.turn() >= deadline.min(stepper.state().time_total()) {
            return Ok(fsq);
        }
    }
    stepper.select_with_weights(&spec.weights)
}

/// `n` expert demonstrations in the given environment. Each uses its own
/// episode seed derived from `config.seed`.
pub fn synthetic_expert(
    dataset: Arc<TaskDataset>,
    config: &EpisodeConfig,
    spec: &ExpertSpec,
    n: usize,
) -> Result<DemonstrationSet> {
    let trajectories = (0..n as u64)
        .map(|i| {
            let mut cfg = config.clone();
            cfg.strategy = StrategyId::DtTaskEnv;
            cfg.seed = split_seed(config.seed, streams::DEMO, i);
            run_expert(dataset.clone(), cfg, spec, |_, _| Ok(()))
        })
        .collect::<Result<Vec<_>>>()?;
    DemonstrationSet::new(trajectories, config.clone())
}

fn run_expert(
    dataset: Arc<TaskDataset>,
    cfg: EpisodeConfig,
    spec: &ExpertSpec,
    mut visit: impl FnMut(&mut Stepper, ActionKind) -> Result<()>,
) -> Result<Trajectory> {
    let mut teacher = SimulatedTeacher::new(dataset.clone(), cfg.seed);
    let mut stepper = Stepper::new(dataset, cfg)?;
    while !stepper.is_finished() {
        let a = expert_action(&mut stepper, spec)?;
        visit(&mut stepper, a)?;
        stepper.play(&a, &mut teacher)?;
    }
    Ok(stepper.trajectory())
}

/// Fraction of expert-visited states, over `episodes` held-out episodes, in
/// which the greedy policy under `weights` picks the expert's action.
pub fn action_agreement(
    dataset: Arc<TaskDataset>,
    config: &EpisodeConfig,
    spec: &ExpertSpec,
    weights: &[f64; NUM_FEATURES],
    episodes: usize,
) -> Result<f64> {
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..episodes as u64 {
        let mut cfg = config.clone();
        cfg.seed = split_seed(config.seed, streams::HELDOUT, i);
        run_expert(dataset.clone(), cfg, spec, |stepper, expert| {
            let mine = stepper.select_with_weights(weights)?;
            total += 1;
            if mine == expert {
                agree += 1;
            }
            Ok(())
        })?;
    }
    Ok(agree as f64 / total.max(1) as f64)
}
