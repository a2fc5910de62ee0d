use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PoolInstance, TaskDataset};
use crate::domain::Concept;
use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

const CLUSTER_SPREAD: f64 = 0.5;
const MIN_CENTER_DISTANCE: f64 = 3.0;
const PHASE_DRIFT: f64 = 1.5;
const MIN_SEPARABILITY: f64 = 0.95;

const LUNCH_CONCEPTS: [&str; 4] = ["main_dish", "snack", "fruit", "beverage"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticTaskSpec {
    pub num_concepts: usize,
    pub feature_dim: usize,
    pub relevant_dim: usize,
    pub phases: usize,
    pub instances_per_phase: usize,
    #[serde(default = "default_test_per_phase")]
    pub test_per_phase: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_test_per_phase() -> usize {
    10
}

fn default_noise() -> f64 {
    0.2
}

impl SyntheticTaskSpec {
    pub fn new(num_concepts: usize, feature_dim: usize, relevant_dim: usize, phases: usize, instances_per_phase: usize, seed: u64) -> Self {
        SyntheticTaskSpec {
            num_concepts,
            feature_dim,
            relevant_dim,
            phases,
            instances_per_phase,
            test_per_phase: default_test_per_phase(),
            noise_sigma: default_noise(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("numConcepts", self.num_concepts),
            ("featureDim", self.feature_dim),
            ("relevantDim", self.relevant_dim),
            ("phases", self.phases),
            ("instancesPerPhase", self.instances_per_phase),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.relevant_dim > self.feature_dim {
            return Err(Error::Config(format!(
                "relevantDim {} exceeds featureDim {}",
                self.relevant_dim, self.feature_dim
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noiseSigma must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// Gaussian concept clusters on the relevant dimensions whose centers drift
/// between phases; the remaining dimensions are shared distractors.
pub fn generate_synthetic_task(spec: &SyntheticTaskSpec) -> Result<TaskDataset> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, streams::DATASET, 0);
    let mut relevant: Vec<usize> = sample(&mut rng, spec.feature_dim, spec.relevant_dim).into_vec();
    relevant.sort_unstable();

    let concepts: Vec<Concept> = (0..spec.num_concepts)
        .map(|c| Concept {
            id: if spec.num_concepts == LUNCH_CONCEPTS.len() {
                LUNCH_CONCEPTS[c].to_string()
            } else {
                format!("c{c}")
            },
            relevant_features: relevant.clone(),
            priority: c as u32,
        })
        .collect();

    for _attempt in 0..20 {
        let centers = phase_centers(&mut rng, spec);
        let mut next_id = 0u64;
        let pool = draw_instances(&mut rng, spec, &relevant, &centers, spec.instances_per_phase, &mut next_id);
        let test = draw_instances(&mut rng, spec, &relevant, &centers, spec.test_per_phase, &mut next_id);
        let dataset = TaskDataset {
            concepts: concepts.clone(),
            feature_dim: spec.feature_dim,
            phases: spec.phases,
            noise_sigma: vec![spec.noise_sigma; spec.feature_dim],
            pool,
            test,
        };
        if spec.num_concepts < 2 || (0..spec.phases).all(|p| nearest_centroid_accuracy(&dataset, p) >= MIN_SEPARABILITY) {
            return Ok(dataset);
        }
    }
    Err(Error::Config("could not generate a task whose phases are linearly separable".into()))
}

/// Per phase, per concept cluster centers in the relevant subspace.
fn phase_centers(rng: &mut ChaCha8Rng, spec: &SyntheticTaskSpec) -> Vec<Vec<Vec<f64>>> {
    let r = spec.relevant_dim;
    let k = spec.num_concepts;
    let mut half_width = 2.0 * (k as f64).powf(1.0 / r as f64).max(1.0);
    let base = loop {
        let mut found = None;
        for _ in 0..1000 {
            let cand: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..r).map(|_| rng.random_range(-half_width..half_width)).collect())
                .collect();
            if min_pairwise(&cand) >= MIN_CENTER_DISTANCE {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(c) => break c,
            None => half_width *= 1.25,
        }
    };
    let drift = Normal::new(0.0, PHASE_DRIFT).expect("valid normal");
    let mut phases = vec![base.clone()];
    for _ in 1..spec.phases {
        let mut chosen = base.clone();
        for _ in 0..1000 {
            let cand: Vec<Vec<f64>> = base
                .iter()
                .map(|m| m.iter().map(|v| v + drift.sample(rng)).collect())
                .collect();
            if min_pairwise(&cand) >= MIN_CENTER_DISTANCE {
                chosen = cand;
                break;
            }
        }
        phases.push(chosen);
    }
    phases
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

fn draw_instances(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticTaskSpec,
    relevant: &[usize],
    centers: &[Vec<Vec<f64>>],
    per_phase: usize,
    next_id: &mut u64,
) -> Vec<PoolInstance> {
    let spread = Normal::new(0.0, CLUSTER_SPREAD).expect("valid normal");
    let distractor = Normal::new(0.0, 1.0).expect("valid normal");
    let mut out = Vec::with_capacity(spec.phases * spec.num_concepts * per_phase);
    for (phase, phase_centers) in centers.iter().enumerate() {
        for (c, center) in phase_centers.iter().enumerate() {
            for _ in 0..per_phase {
                let mut features: Vec<f64> = (0..spec.feature_dim).map(|_| distractor.sample(rng)).collect();
                for (k, &j) in relevant.iter().enumerate() {
                    features[j] = center[k] + spread.sample(rng);
                }
                out.push(PoolInstance {
                    id: *next_id,
                    phase,
                    labels: vec![c],
                    features,
                });
                *next_id += 1;
            }
        }
    }
    out
}

/// Training accuracy of a nearest-centroid (linear) classifier on the
/// relevant features of one phase's pool.
pub fn nearest_centroid_accuracy(dataset: &TaskDataset, phase: usize) -> f64 {
    let relevant = dataset.relevant_features();
    let dims: Vec<usize> = if relevant.is_empty() {
        (0..dataset.feature_dim).collect()
    } else {
        relevant
    };
    let k = dataset.n_concepts();
    let members: Vec<&PoolInstance> = dataset.pool.iter().filter(|p| p.phase == phase).collect();
    if members.is_empty() {
        return 1.0;
    }
    let mut centroids = vec![vec![0.0; dims.len()]; k];
    let mut counts = vec![0usize; k];
    for p in &members {
        let c = p.labels[0];
        counts[c] += 1;
        for (d, &j) in dims.iter().enumerate() {
            centroids[c][d] += p.features[j];
        }
    }
    for (cen, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            cen.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let correct = members
        .iter()
        .filter(|p| {
            let pred = (0..k)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| {
                    let da: f64 = dims.iter().enumerate().map(|(d, &j)| (p.features[j] - centroids[a][d]).powi(2)).sum();
                    let db: f64 = dims.iter().enumerate().map(|(d, &j)| (p.features[j] - centroids[b][d]).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            p.labels.contains(&pred)
        })
        .count();
    correct as f64 / members.len() as f64
}
