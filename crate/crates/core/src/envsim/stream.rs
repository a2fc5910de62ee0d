use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{PoolInstance, TaskDataset};
use crate::domain::{Instance, Scene};
use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

/// Adds fresh observation noise to an underlying object.
pub(crate) fn observe<R: Rng>(dataset: &TaskDataset, item: &PoolInstance, rng: &mut R) -> Instance {
    let features = item
        .features
        .iter()
        .zip(&dataset.noise_sigma)
        .map(|(&v, &s)| {
            if s > 0.0 {
                v + Normal::new(0.0, s).expect("positive sigma").sample(rng)
            } else {
                v
            }
        })
        .collect();
    Instance {
        id: item.id,
        features,
        true_labels: item.labels.clone(),
    }
}

/// Scenes refresh every `change_period` turns and advance one phase per
/// refresh (cyclically). Between refreshes the previous scene is repeated.
#[derive(Clone, Debug)]
pub struct SceneStream {
    dataset: Arc<TaskDataset>,
    change_period: u32,
    scene_size: usize,
    seed: u64,
    current: Option<Scene>,
}

impl SceneStream {
    pub fn new(dataset: Arc<TaskDataset>, change_period: u32, scene_size: usize, seed: u64) -> Result<Self> {
        if change_period == 0 || scene_size == 0 {
            return Err(Error::Config("change period and scene size must be positive".into()));
        }
        Ok(SceneStream {
            dataset,
            change_period,
            scene_size,
            seed,
            current: None,
        })
    }

    pub fn scene_index(&self, turn: u32) -> u32 {
        (turn - 1) / self.change_period
    }

    pub fn phase_of(&self, index: u32) -> usize {
        index as usize % self.dataset.phases.max(1)
    }

    pub fn current(&self) -> Option<&Scene> {
        self.current.as_ref()
    }

    pub fn next_scene(&mut self, turn: u32) -> Result<Scene> {
        if turn < 1 {
            return Err(Error::Input("turns start at 1".into()));
        }
        let index = self.scene_index(turn);
        if let Some(s) = &self.current {
            if s.index == index {
                return Ok(s.clone());
            }
        }
        let scene = self.sample_scene(index)?;
        self.current = Some(scene.clone());
        Ok(scene)
    }

    fn sample_scene(&self, index: u32) -> Result<Scene> {
        let ds = &self.dataset;
        let phase = self.phase_of(index);
        let mut rng = rng_for(self.seed, streams::SCENE, index as u64);
        let k = ds.n_concepts();
        let mut chosen: Vec<Instance> = Vec::with_capacity(self.scene_size);
        for slot in 0..self.scene_size {
            let concept = slot % k;
            let options: Vec<&PoolInstance> = ds
                .pool_for(concept, phase)
                .into_iter()
                .filter(|p| chosen.iter().all(|c| c.id != p.id))
                .collect();
            if let Some(item) = options.choose(&mut rng) {
                chosen.push(observe(ds, item, &mut rng));
            }
        }
        let first_turn = index * self.change_period + 1;
        Scene::new(first_turn, index, phase, chosen)
            .map_err(|e| e.context(format!("phase {phase} has no pool instances")))
    }
}
