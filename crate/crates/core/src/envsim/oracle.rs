use std::sync::Arc;

use rand::seq::IndexedRandom;

use super::stream::observe;
use super::TaskDataset;
use crate::domain::{ActionKind, Instance, OracleAnswer, Scene};
use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

/// Anything that can answer the learner's queries: a simulated teacher, or
/// a human answering through the service.
pub trait Oracle {
    fn answer(&mut self, scene: &Scene, action: &ActionKind, turn: u32) -> Result<OracleAnswer>;
}

/// Answers from ground truth. Demonstrations are drawn with a per-turn RNG
/// so the same (seed, turn, scene) always yields the same instance.
#[derive(Clone, Debug)]
pub struct SimulatedTeacher {
    dataset: Arc<TaskDataset>,
    seed: u64,
}

impl SimulatedTeacher {
    pub fn new(dataset: Arc<TaskDataset>, seed: u64) -> Self {
        SimulatedTeacher { dataset, seed }
    }

    pub fn dataset(&self) -> &TaskDataset {
        &self.dataset
    }
}

impl Oracle for SimulatedTeacher {
    fn answer(&mut self, scene: &Scene, action: &ActionKind, turn: u32) -> Result<OracleAnswer> {
        let ds = &self.dataset;
        match *action {
            ActionKind::NoQuery => Ok(OracleAnswer::NoAnswer),
            ActionKind::LabelQuery(id) => {
                let inst = scene
                    .get(id)
                    .ok_or_else(|| Error::Oracle(format!("instance {id} is not in the scene")))?;
                let concept = ds
                    .primary_label(&inst.true_labels)
                    .ok_or_else(|| Error::Oracle(format!("instance {id} has no true label")))?;
                Ok(OracleAnswer::Label { concept })
            }
            ActionKind::DemoQuery(concept) => {
                if concept >= ds.n_concepts() {
                    return Err(Error::Oracle(format!("unknown concept index {concept}")));
                }
                let mut rng = rng_for(self.seed, streams::ORACLE, turn as u64);
                let in_scene: Vec<&Instance> = scene
                    .instances
                    .iter()
                    .filter(|i| i.true_labels.contains(&concept))
                    .collect();
                let instance = if let Some(inst) = in_scene.choose(&mut rng) {
                    (*inst).clone()
                } else {
                    let pool = ds.pool_for(concept, scene.phase);
                    let item = pool.choose(&mut rng).ok_or_else(|| {
                        Error::Oracle(format!(
                            "no positive instance of '{}' in scene or phase {} pool",
                            ds.concepts[concept].id, scene.phase
                        ))
                    })?;
                    observe(ds, item, &mut rng)
                };
                Ok(OracleAnswer::Demo { instance, concept })
            }
            ActionKind::FeatureSubsetQuery => {
                let features = ds.relevant_features();
                if features.is_empty() {
                    return Err(Error::Oracle("task declares no relevant features".into()));
                }
                Ok(OracleAnswer::FeatureSubset { features })
            }
        }
    }
}
