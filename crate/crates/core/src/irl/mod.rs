//! Maximum-entropy inverse reinforcement learning of the decision-feature
//! weights from expert questioning trajectories.
//!
//! The gradient of the demonstration log-likelihood is the mean demonstrated
//! feature count minus the expected count under the current weights. The
//! expectation is estimated from rollouts of a softmax-over-EU policy in the
//! demonstration environment.

pub mod exact;
mod expert;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::trajectory::feature_counts;
pub use expert::{action_agreement, expert_action, synthetic_expert, ExpertSpec};

use crate::domain::EpisodeConfig;
use crate::envsim::{SimulatedTeacher, TaskDataset};
use crate::episode::{parallel_map, Stepper};
use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, NUM_FEATURES};
use crate::rng::{rng_for, split_seed, streams};
use crate::strategies::{softmax_policy, FeatureSet, StrategyId, WeightVector};
use crate::trajectory::Trajectory;

const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IrlConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub rollouts_per_iteration: usize,
    /// Inverse temperature of the rollout policy.
    pub temperature: f64,
    pub validation_episodes: usize,
    pub seed: u64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            max_iterations: 100,
            learning_rate: 0.05,
            rollouts_per_iteration: 16,
            temperature: 200.0,
            validation_episodes: 4,
            seed: 0,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("maxIterations must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learningRate must be positive".into()));
        }
        if self.rollouts_per_iteration == 0 || self.validation_episodes == 0 {
            return Err(Error::Config("rollout and validation counts must be positive".into()));
        }
        Ok(())
    }
}

/// Demonstrations recorded under one environment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct DemonstrationSet {
    pub trajectories: Vec<Trajectory>,
    pub config: EpisodeConfig,
}

impl DemonstrationSet {
    pub fn new(trajectories: Vec<Trajectory>, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        if trajectories.is_empty() {
            return Err(Error::InsufficientData("at least one demonstration is required".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.len() != config.time_allocation as usize {
                return Err(Error::Input(format!(
                    "demonstration {} has {} steps, the environment allots {} turns",
                    i + 1,
                    t.len(),
                    config.time_allocation
                )));
            }
            if let Some(c) = &t.config {
                let same = c.budget == config.budget
                    && c.time_allocation == config.time_allocation
                    && c.scene_change_period == config.scene_change_period;
                if !same {
                    return Err(Error::Input(format!(
                        "demonstration {} was recorded under different environment conditions",
                        i + 1
                    )));
                }
            }
            if t.total_cost() > config.budget {
                return Err(Error::Input(format!("demonstration {} overspends its budget", i + 1)));
            }
        }
        Ok(DemonstrationSet { trajectories, config })
    }

    /// Environment seeds of the demonstrations, where recorded.
    pub fn seeds(&self) -> Vec<u64> {
        let seeds: Vec<u64> = self.trajectories.iter().filter_map(|t| t.config.as_ref().map(|c| c.seed)).collect();
        if seeds.is_empty() {
            vec![self.config.seed]
        } else {
            seeds
        }
    }

    pub fn mean_counts(&self) -> [f64; NUM_FEATURES] {
        let counts: Vec<[f64; NUM_FEATURES]> = self.trajectories.iter().map(|t| t.feature_counts()).collect();
        mean_counts(&counts)
    }
}

pub fn mean_counts(counts: &[[f64; NUM_FEATURES]]) -> [f64; NUM_FEATURES] {
    let mut acc = [0.0; NUM_FEATURES];
    if counts.is_empty() {
        return acc;
    }
    for c in counts {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.map(|v| v / counts.len() as f64)
}

/// Demonstrated minus expected feature counts.
pub fn irl_gradient(demo_mean: &[f64; NUM_FEATURES], rollouts: &[[f64; NUM_FEATURES]]) -> [f64; NUM_FEATURES] {
    let expected = mean_counts(rollouts);
    std::array::from_fn(|i| demo_mean[i] - expected[i])
}

/// Source of trajectories drawn under the current weights.
pub trait RolloutSampler {
    /// Feature counts of `n` trajectories; `iteration` selects fresh streams.
    fn sample(&mut self, weights: &[f64; NUM_FEATURES], n: usize, iteration: usize) -> Result<Vec<[f64; NUM_FEATURES]>>;
}

/// Episodes in the demonstration environment whose actions are drawn from
/// p(a) ∝ exp(β·EU(a)).
#[derive(Clone, Debug)]
pub struct SoftmaxRollouts {
    dataset: Arc<TaskDataset>,
    config: EpisodeConfig,
    env_seeds: Vec<u64>,
    beta: f64,
    seed: u64,
}

impl SoftmaxRollouts {
    pub fn new(dataset: Arc<TaskDataset>, demos: &DemonstrationSet, beta: f64, seed: u64) -> Self {
        SoftmaxRollouts {
            dataset,
            config: demos.config.clone(),
            env_seeds: demos.seeds(),
            beta,
            seed,
        }
    }

    pub fn rollout(&self, weights: &[f64; NUM_FEATURES], iteration: usize, r: usize) -> Result<Trajectory> {
        let mut cfg = self.config.clone();
        cfg.strategy = StrategyId::DtTaskEnv;
        cfg.seed = self.env_seeds[r % self.env_seeds.len()];
        let mut rng = rng_for(split_seed(self.seed, streams::ROLLOUT, iteration as u64), streams::ROLLOUT, r as u64);
        let mut teacher = SimulatedTeacher::new(self.dataset.clone(), cfg.seed);
        let mut stepper = Stepper::new(self.dataset.clone(), cfg)?;
        while !stepper.is_finished() {
            let scored = stepper.score(weights)?;
            let probs = softmax_policy(&scored, self.beta)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut action = probs.last().expect("NQ is always a candidate").0;
            for (a, p) in &probs {
                acc += p;
                if u < acc {
                    action = *a;
                    break;
                }
            }
            stepper.play(&action, &mut teacher)?;
        }
        Ok(stepper.trajectory())
    }
}

impl RolloutSampler for SoftmaxRollouts {
    fn sample(&mut self, weights: &[f64; NUM_FEATURES], n: usize, iteration: usize) -> Result<Vec<[f64; NUM_FEATURES]>> {
        let idx: Vec<usize> = (0..n).collect();
        parallel_map(&idx, |&r| Ok(self.rollout(weights, iteration, r)?.feature_counts()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub iteration: usize,
    pub weights: [f64; NUM_FEATURES],
    pub gradient: [f64; NUM_FEATURES],
    pub gradient_norm: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_weights: WeightVector,
    pub best_iteration: usize,
    pub validation_accuracy: f64,
    pub log: Vec<IterationRecord>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean final accuracy of greedy episodes under the demonstration
/// environment, on seeds reserved for validation.
pub fn validation_accuracy(
    dataset: &Arc<TaskDataset>,
    config: &EpisodeConfig,
    weights: &[f64; NUM_FEATURES],
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| split_seed(seed, streams::VALIDATION, i)).collect();
    let accs = parallel_map(&seeds, |&s| {
        let mut cfg = config.clone();
        cfg.seed = s;
        cfg.strategy = StrategyId::DtTaskEnv;
        let mut teacher = SimulatedTeacher::new(dataset.clone(), s);
        let mut stepper = Stepper::new(dataset.clone(), cfg)?;
        while !stepper.is_finished() {
            let a = stepper.select_with_weights(weights)?;
            stepper.play(&a, &mut teacher)?;
        }
        Ok(stepper.accuracy())
    })?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Gradient ascent from the uniform weight vector. After every step the
/// weights are scored by validation accuracy; the best-scoring weights are
/// returned (earliest on ties). `on_iteration` sees every log record as it
/// is produced, so a caller keeps the log even when training diverges.
pub fn train_weights(
    demos: &DemonstrationSet,
    config: &IrlConfig,
    dataset: Arc<TaskDataset>,
    sampler: &mut dyn RolloutSampler,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let demo_mean = demos.mean_counts();
    let mut w = [1.0 / NUM_FEATURES as f64; NUM_FEATURES];
    let mut log = Vec::with_capacity(config.max_iterations);
    let mut best: Option<(usize, f64, [f64; NUM_FEATURES])> = None;
    for iteration in 1..=config.max_iterations {
        let rollouts = sampler.sample(&w, config.rollouts_per_iteration, iteration)?;
        let grad = irl_gradient(&demo_mean, &rollouts);
        for (wi, gi) in w.iter_mut().zip(grad) {
            *wi += config.learning_rate * gi;
        }
        let n = norm(&w);
        if !n.is_finite() || n > DIVERGENCE_NORM {
            return Err(Error::Diverged { iteration, norm: n });
        }
        let acc = validation_accuracy(&dataset, &demos.config, &w, config.validation_episodes, config.seed)?;
        let record = IterationRecord {
            iteration,
            weights: w,
            gradient: grad,
            gradient_norm: norm(&grad),
            validation_accuracy: acc,
        };
        on_iteration(&record);
        log.push(record);
        if best.is_none_or(|(_, b, _)| acc > b) {
            best = Some((iteration, acc, w));
        }
    }
    let (best_iteration, validation_accuracy, bw) = best.expect("at least one iteration");
    Ok(TrainOutcome {
        best_weights: WeightVector::new(FeatureSet::TaskEnv, bw.to_vec())?,
        best_iteration,
        validation_accuracy,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainedOn {
    pub config_hash: String,
}

/// Learned weights as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeightsFile {
    pub v: u32,
    pub strategy: StrategyId,
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub trained_on: TrainedOn,
    pub validation_accuracy: f64,
}

impl WeightsFile {
    pub fn new(weights: &WeightVector, env: &EpisodeConfig, irl: &IrlConfig, validation_accuracy: f64) -> Result<Self> {
        Ok(WeightsFile {
            v: 1,
            strategy: StrategyId::DtTaskEnv,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: weights.full().to_vec(),
            trained_on: TrainedOn {
                config_hash: config_hash(env, irl)?,
            },
            validation_accuracy,
        })
    }

    pub fn weight_vector(&self) -> Result<WeightVector> {
        if self.v != 1 {
            return Err(Error::Input(format!("unsupported weights file version {}", self.v)));
        }
        let names: Vec<&str> = self.features.iter().map(String::as_str).collect();
        let set = self
            .strategy
            .feature_set()
            .ok_or_else(|| Error::Input(format!("{} takes no weights", self.strategy)))?;
        let expected: Vec<&str> = set.indices().iter().map(|&i| FEATURE_NAMES[i]).collect();
        if names == expected {
            WeightVector::new(set, self.weights.clone())
        } else if names == FEATURE_NAMES && self.weights.len() == NUM_FEATURES {
            let picked = set.indices().iter().map(|&i| self.weights[i]).collect();
            WeightVector::new(set, picked)
        } else {
            Err(Error::Input("weights file feature names do not match the strategy".into()))
        }
    }
}

/// SHA-256 over the canonical JSON of the training environment and settings.
pub fn config_hash(env: &EpisodeConfig, irl: &IrlConfig) -> Result<String> {
    let canonical = serde_json::to_vec(&(env, irl))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<[f64; NUM_FEATURES]>);

    impl RolloutSampler for Fixed {
        fn sample(&mut self, _: &[f64; NUM_FEATURES], _: usize, _: usize) -> Result<Vec<[f64; NUM_FEATURES]>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn gradient_is_difference_of_means() {
        let demo = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(irl_gradient(&demo, &[demo, demo]), [0.0; NUM_FEATURES]);
        let g = irl_gradient(&demo, &[[0.0; NUM_FEATURES], [2.0; NUM_FEATURES]]);
        assert_eq!(g, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let scaled: Vec<[f64; NUM_FEATURES]> = [[0.0; NUM_FEATURES], [2.0; NUM_FEATURES]]
            .iter()
            .map(|c| c.map(|v| 3.0 * v))
            .collect();
        let g3 = irl_gradient(&demo.map(|v| 3.0 * v), &scaled);
        for (a, b) in g3.iter().zip(g) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_file_round_trip() {
        let w = WeightVector::new(FeatureSet::TaskEnv, vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.0, -0.7]).unwrap();
        let env = EpisodeConfig::new(15, 30, 10, StrategyId::DtTaskEnv, 0);
        let f = WeightsFile::new(&w, &env, &IrlConfig::default(), 0.8).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains(r#""strategy":"dt-task-env""#));
        assert!(text.contains(r#""trainedOn":{"configHash":""#));
        let back: WeightsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.weight_vector().unwrap(), w);
        assert_eq!(f.trained_on.config_hash.len(), 64);
    }

    #[test]
    fn invalid_configs() {
        assert!(IrlConfig { max_iterations: 0, ..IrlConfig::default() }.validate().is_err());
        assert!(IrlConfig { temperature: 0.0, ..IrlConfig::default() }.validate().is_err());
    }

    #[test]
    fn one_iteration_takes_one_step() {
        use crate::envsim::{generate_synthetic_task, SyntheticTaskSpec};
        let ds = Arc::new(generate_synthetic_task(&SyntheticTaskSpec::new(2, 3, 1, 1, 6, 1)).unwrap());
        let env = EpisodeConfig::new(2, 3, 3, StrategyId::DtTaskEnv, 0);
        let demo = Trajectory {
            steps: (1..=3)
                .map(|t| crate::trajectory::Step {
                    v: 1,
                    turn: t,
                    phi: [1.0; NUM_FEATURES],
                    action: crate::domain::ActionKind::NoQuery,
                    cost: 0,
                    cum_cost: 0,
                    accuracy: 0.5,
                })
                .collect(),
            config: None,
        };
        let demos = DemonstrationSet::new(vec![demo], env).unwrap();
        let cfg = IrlConfig {
            max_iterations: 1,
            validation_episodes: 1,
            ..IrlConfig::default()
        };
        let mut sampler = Fixed(vec![[0.0; NUM_FEATURES]]);
        let mut seen = 0;
        let out = train_weights(&demos, &cfg, ds, &mut sampler, |_| seen += 1).unwrap();
        assert_eq!(seen, 1);
        assert_eq!(out.log.len(), 1);
        let expected = 1.0 / 7.0 + 0.05 * 3.0;
        assert!(out.best_weights.full().iter().all(|w| (w - expected).abs() < 1e-12));
    }

    #[test]
    fn divergence_is_reported() {
        use crate::envsim::{generate_synthetic_task, SyntheticTaskSpec};
        let ds = Arc::new(generate_synthetic_task(&SyntheticTaskSpec::new(2, 3, 1, 1, 6, 1)).unwrap());
        let env = EpisodeConfig::new(2, 3, 3, StrategyId::DtTaskEnv, 0);
        let demo = Trajectory {
            steps: (1..=3)
                .map(|t| crate::trajectory::Step {
                    v: 1,
                    turn: t,
                    phi: [1e9; NUM_FEATURES],
                    action: crate::domain::ActionKind::NoQuery,
                    cost: 0,
                    cum_cost: 0,
                    accuracy: 0.5,
                })
                .collect(),
            config: None,
        };
        let demos = DemonstrationSet::new(vec![demo], env).unwrap();
        let mut sampler = Fixed(vec![[0.0; NUM_FEATURES]]);
        let err = train_weights(&demos, &IrlConfig::default(), ds, &mut sampler, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 1, .. }));
    }
}
