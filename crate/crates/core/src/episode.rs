//! Episode runner: observe, select, ask, absorb, record; plus condition
//! sweeps over seeds and learning-curve aggregation.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{candidate_actions, Action, ActionKind, EpisodeConfig, Instance, LearningState, OracleAnswer, Scene};
use crate::envsim::{Oracle, SceneStream, SimulatedTeacher, TaskDataset};
use crate::error::{Error, Result};
use crate::features::{
    budget_consumption, feature_vector, remaining_time_usage, DecisionFeatureVector, NUM_FEATURES,
};
use crate::gp::ClassifierEnsemble;
use crate::stats::{mann_whitney_greater, mean_and_stderr, MannWhitney};
use crate::strategies::{argmax_action, u_sampling_select, Lookahead, LookaheadContext, Strategy, StrategyId};
use crate::trajectory::{Step, Trajectory, LOG_VERSION};

/// Fraction of test instances whose argmax posterior concept is one of their
/// true labels. Ties go to the first declared concept.
pub fn evaluate_accuracy(ensemble: &ClassifierEnsemble, test: &[Instance]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let post = ensemble.posterior_matrix(test)?;
    let correct = post
        .iter()
        .zip(test)
        .filter(|(row, inst)| inst.true_labels.contains(&argmax_concept(row)))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub fn argmax_concept(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// Answer size assumed when simulating a feature subset query: the size of
/// the task's declared relevant set, or sqrt(dim) when none is declared.
pub fn default_fsq_proxy_size(dataset: &TaskDataset) -> usize {
    let dim = dataset.feature_dim;
    match dataset.relevant_features().len() {
        0 => ((dim as f64).sqrt().ceil() as usize).clamp(1, dim.max(1)),
        n => n,
    }
}

/// Environment features (qbc, rtu, nqt) of the successor reached by `action`.
/// They are the same for every answer the oracle might give.
fn environment_after(state: &LearningState, action: &ActionKind, window: u32) -> [f64; 3] {
    let cost = state.costs().cost_of(action);
    let run = if action.is_query() {
        0
    } else {
        1 + state
            .history()
            .iter()
            .rev()
            .take_while(|h| h.action == ActionKind::NoQuery)
            .count()
    };
    let nqt = if window == 0 {
        0.0
    } else {
        run.min(window as usize) as f64 / window as f64
    };
    [
        budget_consumption(state.budget_spent() + cost, state.budget_total()),
        remaining_time_usage(state.turn() + 1, state.time_total()),
        nqt,
    ]
}

/// Task-feature expectations are a function of (sample, feature subset,
/// scene) only, so they survive no-query turns inside one scene.
#[derive(Clone, Debug)]
struct TaskFeatureCache {
    key: (usize, u32, bool),
    by_action: HashMap<ActionKind, [f64; 4]>,
}

/// A live episode. Holds the learner's state with posteriors current for the
/// scene of the turn about to be played.
#[derive(Clone, Debug)]
pub struct Stepper {
    dataset: Arc<TaskDataset>,
    config: EpisodeConfig,
    ctx: LookaheadContext,
    stream: SceneStream,
    state: LearningState,
    scene: Scene,
    ensemble: ClassifierEnsemble,
    test: Arc<Vec<Instance>>,
    accuracy: f64,
    steps: Vec<Step>,
    cache: Option<TaskFeatureCache>,
}

impl Stepper {
    pub fn new(dataset: Arc<TaskDataset>, config: EpisodeConfig) -> Result<Self> {
        config.validate_engine()?;
        let test = Arc::new(dataset.test_instances());
        if test.is_empty() {
            return Err(Error::InsufficientData("task has no hold-out test instances".into()));
        }
        let dim = dataset.feature_dim;
        let ctx = LookaheadContext {
            backend: config.classifier.backend(),
            window: config.window_size,
            fsq_proxy_size: config.fsq_proxy_size.unwrap_or_else(|| default_fsq_proxy_size(&dataset)),
        };
        let mut stream = SceneStream::new(dataset.clone(), config.scene_change_period, config.scene_size, config.seed)?;
        let state = LearningState::new(&config, dataset.n_concepts(), dim);
        let ensemble = ClassifierEnsemble::fit(ctx.backend.as_ref(), state.sample(), dataset.n_concepts(), dim, None)?;
        let accuracy = evaluate_accuracy(&ensemble, &test)?;
        let scene = stream.next_scene(1)?;
        let post = ensemble.posterior_matrix(&scene.instances)?;
        let state = state.with_posteriors(post)?;
        Ok(Stepper {
            dataset,
            config,
            ctx,
            stream,
            state,
            scene,
            ensemble,
            test,
            accuracy,
            steps: Vec::new(),
            cache: None,
        })
    }

    pub fn dataset(&self) -> &Arc<TaskDataset> {
        &self.dataset
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn context(&self) -> &LookaheadContext {
        &self.ctx
    }

    pub fn state(&self) -> &LearningState {
        &self.state
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn ensemble(&self) -> &ClassifierEnsemble {
        &self.ensemble
    }

    /// Hold-out accuracy of the current classifiers.
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_finished()
    }

    /// The turn about to be played (1-based).
    pub fn turn(&self) -> u32 {
        self.state.turn() + 1
    }

    pub fn phi(&self) -> DecisionFeatureVector {
        feature_vector(&self.state, self.ctx.window)
    }

    pub fn candidates(&self) -> Vec<Action> {
        candidate_actions(&self.state, &self.scene)
    }

    /// Expected successor features of every candidate, in candidate order.
    pub fn candidate_features(&mut self) -> Result<Vec<(ActionKind, [f64; NUM_FEATURES])>> {
        let candidates = self.candidates();
        let key = (self.state.sample().len(), self.scene.index, self.state.fsq_answered());
        let hit = self.cache.as_ref().is_some_and(|c| {
            c.key == key && candidates.iter().all(|a| c.by_action.contains_key(&a.kind))
        });
        if !hit {
            let look = Lookahead::new(&self.ctx, &self.state, &self.scene)?;
            let by_action = look
                .expected_features()?
                .into_iter()
                .map(|(a, phi)| (a, [phi[0], phi[1], phi[2], phi[3]]))
                .collect();
            self.cache = Some(TaskFeatureCache { key, by_action });
        }
        let cache = self.cache.as_ref().expect("cache filled above");
        Ok(candidates
            .iter()
            .map(|a| {
                let t = cache.by_action[&a.kind];
                let e = environment_after(&self.state, &a.kind, self.ctx.window);
                (a.kind, [t[0], t[1], t[2], t[3], e[0], e[1], e[2]])
            })
            .collect())
    }

    /// Expected utility of every candidate under `weights`.
    pub fn score(&mut self, weights: &[f64; NUM_FEATURES]) -> Result<Vec<(ActionKind, f64)>> {
        let feats = self.candidate_features()?;
        Ok(feats
            .into_iter()
            .map(|(a, phi)| (a, weights.iter().zip(phi).map(|(w, f)| w * f).sum()))
            .collect())
    }

    pub fn select_with_weights(&mut self, weights: &[f64; NUM_FEATURES]) -> Result<ActionKind> {
        if self.candidates().len() == 1 {
            return Ok(ActionKind::NoQuery);
        }
        let scored = self.score(weights)?;
        Ok(argmax_action(&scored, weights))
    }

    pub fn select(&mut self, strategy: &Strategy) -> Result<ActionKind> {
        match &strategy.weights {
            None => Ok(u_sampling_select(&self.state, &self.scene)),
            Some(w) => self.select_with_weights(&w.full()),
        }
    }

    /// Absorbs the answer to `action`, refits if the sample or feature subset
    /// changed, records the step and observes the next turn's scene.
    pub fn commit(&mut self, action: &ActionKind, answer: &OracleAnswer) -> Result<Step> {
        let turn = self.turn();
        if !self.candidates().iter().any(|a| a.kind == *action) {
            if self.is_finished() {
                return Err(Error::EpisodeFinished(self.state.turn()));
            }
            let cost = self.state.costs().cost_of(action);
            if cost > self.state.budget_remaining() {
                return Err(Error::BudgetExceeded {
                    spent: self.state.budget_spent(),
                    cost,
                    budget: self.state.budget_total(),
                });
            }
            return Err(Error::Contract(format!("{action} is not a candidate at turn {turn}")));
        }
        let phi = self.phi().to_array();
        let next = self.state.apply_answer(&self.scene, action, answer)?;
        if next.models_stale() {
            self.ensemble = ClassifierEnsemble::fit(
                self.ctx.backend.as_ref(),
                next.sample(),
                next.n_concepts(),
                next.feature_dim(),
                next.active_subset(),
            )?;
            self.accuracy = evaluate_accuracy(&self.ensemble, &self.test)?;
        }
        let cost = self.state.costs().cost_of(action);
        let step = Step {
            v: LOG_VERSION,
            turn,
            phi,
            action: *action,
            cost,
            cum_cost: next.budget_spent(),
            accuracy: self.accuracy,
        };
        if next.is_finished() {
            let post = self.state.posteriors().to_vec();
            self.state = next.with_posteriors(post)?;
        } else {
            let scene = self.stream.next_scene(turn + 1)?;
            let post = self.ensemble.posterior_matrix(&scene.instances)?;
            self.state = next.with_posteriors(post)?;
            self.scene = scene;
        }
        self.steps.push(step.clone());
        Ok(step)
    }

    /// Asks `oracle` (unless `action` is a no-query) and commits the answer.
    pub fn play(&mut self, action: &ActionKind, oracle: &mut dyn Oracle) -> Result<(OracleAnswer, Step)> {
        let answer = if action.is_query() {
            oracle
                .answer(&self.scene, action, self.turn())
                .map_err(|e| e.context(format!("episode seed {} turn {}", self.config.seed, self.turn())))?
        } else {
            OracleAnswer::NoAnswer
        };
        let step = self.commit(action, &answer)?;
        Ok((answer, step))
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            steps: self.steps.clone(),
            config: Some(self.config.clone()),
        }
    }
}

/// Plays one episode to its time allocation.
pub fn run_episode(
    dataset: Arc<TaskDataset>,
    config: &EpisodeConfig,
    strategy: &Strategy,
    oracle: &mut dyn Oracle,
) -> Result<Trajectory> {
    let mut config = config.clone();
    config.strategy = strategy.id;
    let mut stepper = Stepper::new(dataset, config)?;
    while !stepper.is_finished() {
        let action = stepper.select(strategy)?;
        stepper.play(&action, oracle)?;
    }
    Ok(stepper.trajectory())
}

/// Episode with the simulated teacher seeded like the episode.
pub fn run_simulated(dataset: Arc<TaskDataset>, config: &EpisodeConfig, strategy: &Strategy) -> Result<Trajectory> {
    let mut teacher = SimulatedTeacher::new(dataset.clone(), config.seed);
    run_episode(dataset, config, strategy, &mut teacher)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CurvePoint {
    pub turn: u32,
    pub mean_accuracy: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub runs: usize,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InsufficientData("no runs to aggregate".into()));
        }
        let len = trajectories[0].len();
        if trajectories.iter().any(|t| t.len() != len) {
            return Err(Error::Contract("runs differ in length".into()));
        }
        let points = (0..len)
            .map(|i| {
                let accs: Vec<f64> = trajectories.iter().map(|t| t.steps[i].accuracy).collect();
                let (mean, se) = mean_and_stderr(&accs);
                CurvePoint {
                    turn: trajectories[0].steps[i].turn,
                    mean_accuracy: mean,
                    std_error: se,
                }
            })
            .collect();
        Ok(LearningCurve {
            runs: trajectories.len(),
            points,
        })
    }
}

/// All runs of one strategy in one condition.
#[derive(Clone, Debug)]
pub struct ConditionResult {
    pub strategy: StrategyId,
    pub curve: LearningCurve,
    pub trajectories: Vec<Trajectory>,
}

impl ConditionResult {
    pub fn final_accuracies(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.final_accuracy().unwrap_or(0.0)).collect()
    }

    pub fn mean_queries(&self) -> f64 {
        let n = self.trajectories.len().max(1) as f64;
        self.trajectories.iter().map(|t| t.query_count() as f64).sum::<f64>() / n
    }
}

/// Runs every strategy over every seed under `base` (whose seed is replaced).
/// Runs are spread over the available cores; results do not depend on it.
pub fn run_condition(
    dataset: Arc<TaskDataset>,
    strategies: &[Strategy],
    base: &EpisodeConfig,
    seeds: &[u64],
) -> Result<Vec<ConditionResult>> {
    if seeds.is_empty() {
        return Err(Error::InsufficientData("at least one seed is required".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..strategies.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run = |&(s, seed): &(usize, u64)| {
        let mut cfg = base.clone();
        cfg.seed = seed;
        run_simulated(dataset.clone(), &cfg, &strategies[s])
    };
    let outputs = parallel_map(&jobs, run)?;
    let mut out = Vec::with_capacity(strategies.len());
    for (s, strategy) in strategies.iter().enumerate() {
        let trajectories: Vec<Trajectory> = jobs
            .iter()
            .zip(&outputs)
            .filter(|((js, _), _)| *js == s)
            .map(|(_, t)| t.clone())
            .collect();
        out.push(ConditionResult {
            strategy: strategy.id,
            curve: LearningCurve::from_trajectories(&trajectories)?,
            trajectories,
        });
    }
    Ok(out)
}

/// Order-preserving map over a scoped thread pool sized to the machine.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let collected = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                collected.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// One-tailed Mann-Whitney test that `a`'s final accuracies exceed `b`'s.
pub fn compare_strategies(a: &ConditionResult, b: &ConditionResult) -> Result<MannWhitney> {
    compare_final_accuracies(&a.final_accuracies(), &b.final_accuracies())
}

pub fn compare_final_accuracies(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "comparison needs at least 3 runs per strategy, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    mann_whitney_greater(a, b)
}

/// CSV with header `strategy,turn,mean_acc,std_err`.
pub fn curves_csv(results: &[ConditionResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "turn", "mean_acc", "std_err"])?;
    for r in results {
        for p in &r.curve.points {
            w.write_record([
                r.strategy.as_str().to_string(),
                p.turn.to_string(),
                p.mean_accuracy.to_string(),
                p.std_error.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
