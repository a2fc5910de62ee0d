//! Dynamic-environment simulation: task datasets, scene streams with state
//! change, a simulated teacher and dataset file ingestion.

mod files;
mod oracle;
mod stream;
mod synth;

pub use crate::domain::OracleAnswer;
pub use files::{load_task, write_task};
pub use oracle::{Oracle, SimulatedTeacher};
pub use stream::SceneStream;
pub use synth::{generate_synthetic_task, nearest_centroid_accuracy, SyntheticTaskSpec};

use serde::{Deserialize, Serialize};

use crate::domain::{Concept, ConceptIdx, Instance, InstanceId};
use crate::error::{Error, Result};

/// An underlying object in a concept pool, before observation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolInstance {
    pub id: InstanceId,
    pub phase: usize,
    pub labels: Vec<ConceptIdx>,
    pub features: Vec<f64>,
}

impl PoolInstance {
    pub fn has_label(&self, c: ConceptIdx) -> bool {
        self.labels.contains(&c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskDataset {
    pub concepts: Vec<Concept>,
    pub feature_dim: usize,
    pub phases: usize,
    /// Per-feature observation noise scale.
    pub noise_sigma: Vec<f64>,
    pub pool: Vec<PoolInstance>,
    /// Hold-out evaluation instances, disjoint from the pool.
    pub test: Vec<PoolInstance>,
}

impl TaskDataset {
    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn concept_index(&self, id: &str) -> Option<ConceptIdx> {
        self.concepts.iter().position(|c| c.id == id)
    }

    /// Pool instances of `concept` in `phase`.
    pub fn pool_for(&self, concept: ConceptIdx, phase: usize) -> Vec<&PoolInstance> {
        self.pool
            .iter()
            .filter(|p| p.phase == phase && p.has_label(concept))
            .collect()
    }

    /// Union of every concept's relevant features, sorted.
    pub fn relevant_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .concepts
            .iter()
            .flat_map(|c| c.relevant_features.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The single label an oracle reports: the highest-priority true label.
    pub fn primary_label(&self, labels: &[ConceptIdx]) -> Option<ConceptIdx> {
        labels
            .iter()
            .copied()
            .min_by_key(|&c| (self.concepts[c].priority, c))
    }

    pub fn test_instances(&self) -> Vec<Instance> {
        self.test
            .iter()
            .map(|p| Instance {
                id: p.id,
                features: p.features.clone(),
                true_labels: p.labels.clone(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::Config("task declares no concepts".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.concepts {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Config(format!("duplicate concept id '{}'", c.id)));
            }
            if let Some(&f) = c.relevant_features.iter().find(|&&f| f >= self.feature_dim) {
                return Err(Error::Config(format!(
                    "concept '{}' names relevant feature {f} outside dimension {}",
                    c.id, self.feature_dim
                )));
            }
        }
        if self.noise_sigma.len() != self.feature_dim {
            return Err(Error::Config("noiseSigma length differs from feature dimension".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in self.pool.iter().chain(&self.test) {
            if p.features.len() != self.feature_dim {
                return Err(Error::Config(format!("instance {} has wrong dimensionality", p.id)));
            }
            if p.labels.is_empty() || p.labels.iter().any(|&l| l >= self.concepts.len()) {
                return Err(Error::Config(format!("instance {} has invalid labels", p.id)));
            }
            if p.phase >= self.phases {
                return Err(Error::Config(format!("instance {} has phase beyond {}", p.id, self.phases)));
            }
            if !seen.insert(p.id) {
                return Err(Error::Config(format!("duplicate instance id {}", p.id)));
            }
        }
        Ok(())
    }
}
