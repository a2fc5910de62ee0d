//! Exact trajectory enumeration for small episodes.
//!
//! Used to check the sampled gradient: on an episode with a handful of turns
//! and actions, every trajectory can be enumerated, so the max-ent
//! distribution p(τ|w) ∝ exp(w·f(τ)), its log-likelihood and its gradient
//! are available in closed form.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::RolloutSampler;
use crate::domain::{ActionKind, CostTable, EpisodeConfig};
use crate::envsim::{generate_synthetic_task, SimulatedTeacher, SyntheticTaskSpec};
use crate::episode::Stepper;
use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::rng::{rng_for, streams};
use crate::strategies::StrategyId;

#[derive(Clone, Debug)]
struct Node {
    /// Features of the state in which the node's action is chosen.
    phi: [f64; NUM_FEATURES],
    /// (action, child) pairs; empty at the end of the episode.
    children: Vec<(ActionKind, usize)>,
}

/// Every action sequence of an episode, as a tree of visited states.
#[derive(Clone, Debug)]
pub struct TrajectoryTree {
    nodes: Vec<Node>,
}

fn dot(w: &[f64; NUM_FEATURES], f: &[f64; NUM_FEATURES]) -> f64 {
    w.iter().zip(f).map(|(a, b)| a * b).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl TrajectoryTree {
    /// Expands every candidate action at every turn. Fails when the tree
    /// would exceed `max_nodes`.
    pub fn enumerate(stepper: &Stepper, teacher: &SimulatedTeacher, max_nodes: usize) -> Result<Self> {
        let mut tree = TrajectoryTree { nodes: Vec::new() };
        tree.expand(stepper.clone(), teacher, max_nodes)?;
        Ok(tree)
    }

    fn expand(&mut self, stepper: Stepper, teacher: &SimulatedTeacher, max_nodes: usize) -> Result<usize> {
        if self.nodes.len() >= max_nodes {
            return Err(Error::Config(format!("episode has more than {max_nodes} states")));
        }
        let id = self.nodes.len();
        let finished = stepper.is_finished();
        self.nodes.push(Node {
            phi: stepper.phi().to_array(),
            children: Vec::new(),
        });
        if finished {
            return Ok(id);
        }
        let actions: Vec<ActionKind> = stepper.candidates().iter().map(|a| a.kind).collect();
        let mut children = Vec::with_capacity(actions.len());
        for a in actions {
            let mut next = stepper.clone();
            let mut t = teacher.clone();
            next.play(&a, &mut t)?;
            children.push((a, self.expand(next, teacher, max_nodes)?));
        }
        self.nodes[id].children = children;
        Ok(id)
    }

    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        let mut n = 0;
        while let Some(&(_, c)) = self.nodes[n].children.first() {
            d += 1;
            n = c;
        }
        d
    }

    /// Every complete trajectory as (actions, feature counts).
    pub fn trajectories(&self) -> Vec<(Vec<ActionKind>, [f64; NUM_FEATURES])> {
        let mut out = Vec::new();
        self.walk(0, &mut Vec::new(), [0.0; NUM_FEATURES], &mut out);
        out
    }

    fn walk(
        &self,
        node: usize,
        path: &mut Vec<ActionKind>,
        acc: [f64; NUM_FEATURES],
        out: &mut Vec<(Vec<ActionKind>, [f64; NUM_FEATURES])>,
    ) {
        let n = &self.nodes[node];
        if n.children.is_empty() {
            out.push((path.clone(), acc));
            return;
        }
        let counts: [f64; NUM_FEATURES] = std::array::from_fn(|i| acc[i] + n.phi[i]);
        for &(a, c) in &n.children {
            path.push(a);
            self.walk(c, path, counts, out);
            path.pop();
        }
    }

    pub fn feature_counts(&self) -> Vec<[f64; NUM_FEATURES]> {
        self.trajectories().into_iter().map(|(_, f)| f).collect()
    }

    /// Soft value of every node: log of the summed exp-utility of its subtree.
    fn soft_values(&self, w: &[f64; NUM_FEATURES]) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        // Children always have larger indices than their parent.
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            if !n.children.is_empty() {
                let kids: Vec<f64> = n.children.iter().map(|&(_, c)| v[c]).collect();
                v[i] = dot(w, &n.phi) + log_sum_exp(&kids);
            }
        }
        v
    }

    pub fn log_partition(&self, w: &[f64; NUM_FEATURES]) -> f64 {
        self.soft_values(w)[0]
    }

    /// Mean log-probability of the demonstrated feature counts.
    pub fn log_likelihood(&self, w: &[f64; NUM_FEATURES], demo_counts: &[[f64; NUM_FEATURES]]) -> f64 {
        let z = self.log_partition(w);
        demo_counts.iter().map(|f| dot(w, f) - z).sum::<f64>() / demo_counts.len() as f64
    }

    /// Expected feature counts under p(τ|w).
    pub fn expected_counts(&self, w: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let all = self.feature_counts();
        let logits: Vec<f64> = all.iter().map(|f| dot(w, f)).collect();
        let z = log_sum_exp(&logits);
        let mut out = [0.0; NUM_FEATURES];
        for (f, l) in all.iter().zip(logits) {
            let p = (l - z).exp();
            for (o, v) in out.iter_mut().zip(f) {
                *o += p * v;
            }
        }
        out
    }

    pub fn exact_gradient(&self, w: &[f64; NUM_FEATURES], demo_counts: &[[f64; NUM_FEATURES]]) -> [f64; NUM_FEATURES] {
        let demo_mean = super::mean_counts(demo_counts);
        let expected = self.expected_counts(w);
        std::array::from_fn(|i| demo_mean[i] - expected[i])
    }

    /// Central finite differences of the exact log-likelihood.
    pub fn finite_difference_gradient(
        &self,
        w: &[f64; NUM_FEATURES],
        demo_counts: &[[f64; NUM_FEATURES]],
        h: f64,
    ) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| {
            let mut up = *w;
            let mut down = *w;
            up[i] += h;
            down[i] -= h;
            (self.log_likelihood(&up, demo_counts) - self.log_likelihood(&down, demo_counts)) / (2.0 * h)
        })
    }

    /// Draws one trajectory from p(τ|w) by descending the tree with the
    /// soft-value policy π(c|n) = exp(V(c) − logsumexp V(children)).
    fn sample_counts(&self, values: &[f64], rng: &mut ChaCha8Rng) -> [f64; NUM_FEATURES] {
        let mut acc = [0.0; NUM_FEATURES];
        let mut node = 0;
        while !self.nodes[node].children.is_empty() {
            let n = &self.nodes[node];
            for (a, p) in acc.iter_mut().zip(n.phi) {
                *a += p;
            }
            let kids: Vec<f64> = n.children.iter().map(|&(_, c)| values[c]).collect();
            let z = log_sum_exp(&kids);
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut next = n.children.last().expect("non-empty").1;
            for (&(_, c), v) in n.children.iter().zip(&kids) {
                cum += (v - z).exp();
                if u < cum {
                    next = c;
                    break;
                }
            }
            node = next;
        }
        acc
    }
}

/// Samples trajectories exactly from the max-ent distribution of a tree.
pub struct EnumeratedSampler {
    tree: Arc<TrajectoryTree>,
    seed: u64,
}

impl EnumeratedSampler {
    pub fn new(tree: Arc<TrajectoryTree>, seed: u64) -> Self {
        EnumeratedSampler { tree, seed }
    }
}

impl RolloutSampler for EnumeratedSampler {
    fn sample(&mut self, weights: &[f64; NUM_FEATURES], n: usize, iteration: usize) -> Result<Vec<[f64; NUM_FEATURES]>> {
        let values = self.tree.soft_values(weights);
        let mut rng = rng_for(self.seed, streams::ROLLOUT, iteration as u64);
        Ok((0..n).map(|_| self.tree.sample_counts(&values, &mut rng)).collect())
    }
}

/// A three-turn episode with at most three candidate actions per turn: two
/// scene instances, demonstrations and feature subsets priced out of reach.
pub fn toy_episode(seed: u64) -> Result<(Stepper, SimulatedTeacher)> {
    let dataset = Arc::new(generate_synthetic_task(&SyntheticTaskSpec {
        test_per_phase: 5,
        ..SyntheticTaskSpec::new(2, 3, 1, 1, 6, seed)
    })?);
    let mut cfg = EpisodeConfig::new(2, 3, 2, StrategyId::DtTaskEnv, seed);
    cfg.scene_size = 2;
    cfg.costs = CostTable {
        demo_query: 5,
        label_query: 1,
        feature_subset_query: 5,
        no_query: 0,
    };
    let teacher = SimulatedTeacher::new(dataset.clone(), seed);
    Ok((Stepper::new(dataset, cfg)?, teacher))
}
