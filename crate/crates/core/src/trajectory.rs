//! Trajectories and their line-delimited log format.
//!
//! A log is a sequence of JSON objects, one per line. Step records carry the
//! state's decision features and the action taken; an optional summary record
//! closes a trajectory with its configuration and feature counts. A step whose
//! turn does not increase also starts a new trajectory, so plain step logs can
//! be concatenated.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, EpisodeConfig};
use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Step {
    pub v: u32,
    pub turn: u32,
    /// Decision features of the state in which the action was chosen.
    pub phi: [f64; NUM_FEATURES],
    pub action: ActionKind,
    pub cost: u32,
    pub cum_cost: u32,
    /// Hold-out accuracy after the turn's answer was absorbed.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub v: u32,
    pub config: EpisodeConfig,
    pub feature_counts: [f64; NUM_FEATURES],
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Record {
    Step(Step),
    Summary(Summary),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub config: Option<EpisodeConfig>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.steps.last().map(|s| s.accuracy)
    }

    pub fn total_cost(&self) -> u32 {
        self.steps.last().map_or(0, |s| s.cum_cost)
    }

    pub fn query_count(&self) -> usize {
        self.steps.iter().filter(|s| s.action.is_query()).count()
    }

    pub fn feature_counts(&self) -> [f64; NUM_FEATURES] {
        feature_counts(&self.steps)
    }

    /// Cumulative cost after each turn.
    pub fn cost_curve(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.cum_cost).collect()
    }

    pub fn summary(&self) -> Option<Summary> {
        Some(Summary {
            v: LOG_VERSION,
            config: self.config.clone()?,
            feature_counts: self.feature_counts(),
            final_accuracy: self.final_accuracy().unwrap_or(0.0),
        })
    }
}

/// Per-component sum of the state features over the steps.
pub fn feature_counts(steps: &[Step]) -> [f64; NUM_FEATURES] {
    let mut acc = [0.0; NUM_FEATURES];
    for s in steps {
        for (a, v) in acc.iter_mut().zip(s.phi) {
            *a += v;
        }
    }
    acc
}

pub fn to_jsonl(trajectories: &[Trajectory]) -> Result<String> {
    let mut out = String::new();
    for t in trajectories {
        for s in &t.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        if let Some(summary) = t.summary() {
            out.push_str(&serde_json::to_string(&summary)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn from_jsonl(name: &str, text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    let mut current = Trajectory::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |message: String| Error::Row {
            file: name.to_string(),
            row: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| row_err(format!("unrecognized record: {e}")))?;
        match record {
            Record::Step(step) => {
                if step.v != LOG_VERSION {
                    return Err(row_err(format!("unsupported version {}", step.v)));
                }
                if let Some(last) = current.steps.last() {
                    if step.turn <= last.turn {
                        out.push(std::mem::take(&mut current));
                    }
                }
                current.steps.push(step);
            }
            Record::Summary(summary) => {
                if summary.v != LOG_VERSION {
                    return Err(row_err(format!("unsupported version {}", summary.v)));
                }
                let recomputed = current.feature_counts();
                let drift = recomputed
                    .iter()
                    .zip(summary.feature_counts)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if drift > 1e-9 * (1.0 + current.len() as f64) {
                    return Err(row_err("summary feature counts disagree with the steps".into()));
                }
                current.config = Some(summary.config);
                out.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    Ok(out)
}
