//! Decision features. Each maps a learning state to [0,1]; the utility of a
//! state is a weighted sum of them.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, HistoryEntry, LabeledExample, LearningState};
use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "classifier_discriminability",
    "class_distribution_uniformity",
    "instance_variation",
    "prediction_margin",
    "budget_consumption",
    "remaining_time_usage",
    "non_query_time",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionFeatureVector {
    pub acd: f64,
    pub cdu: f64,
    pub iv: f64,
    pub pm: f64,
    pub qbc: f64,
    pub rtu: f64,
    pub nqt: f64,
}

impl DecisionFeatureVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.acd, self.cdu, self.iv, self.pm, self.qbc, self.rtu, self.nqt]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        DecisionFeatureVector {
            acd: a[0],
            cdu: a[1],
            iv: a[2],
            pm: a[3],
            qbc: a[4],
            rtu: a[5],
            nqt: a[6],
        }
    }

    pub fn in_unit_cube(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Mean over concepts of the range of p(y|x) across scene instances.
pub fn classifier_discriminability(posteriors: &[Vec<f64>]) -> f64 {
    let Some(first) = posteriors.first() else {
        return 0.0;
    };
    let k = first.len();
    if k == 0 {
        return 0.0;
    }
    let total: f64 = (0..k)
        .map(|c| {
            let (lo, hi) = posteriors
                .iter()
                .map(|r| r[c])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
            hi - lo
        })
        .sum();
    (total / k as f64).clamp(0.0, 1.0)
}

/// Ratio of positive-example counts of the least and most represented concepts.
pub fn class_distribution_uniformity(sample: &[LabeledExample], n_concepts: usize) -> f64 {
    if sample.is_empty() || n_concepts == 0 {
        return 0.0;
    }
    let mut counts = vec![0usize; n_concepts];
    for ex in sample {
        if ex.concept < n_concepts {
            counts[ex.concept] += 1;
        }
    }
    let max = *counts.iter().max().unwrap_or(&0);
    let min = *counts.iter().min().unwrap_or(&0);
    if max == 0 {
        0.0
    } else {
        min as f64 / max as f64
    }
}

/// p(x|y) as the column-normalized posterior: the probability of each scene
/// instance being picked as an example of `y`.
pub fn class_likelihoods(posteriors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = posteriors.first() else {
        return Vec::new();
    };
    let k = first.len();
    let sums: Vec<f64> = (0..k).map(|c| posteriors.iter().map(|r| r[c]).sum()).collect();
    posteriors
        .iter()
        .map(|r| {
            r.iter()
                .zip(&sums)
                .map(|(&p, &s)| if s > 0.0 { p / s } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Mean over concepts of the relative (population) standard deviation of
/// p(X|y), clamped to [0,1].
pub fn instance_variation(likelihoods: &[Vec<f64>]) -> f64 {
    let Some(first) = likelihoods.first() else {
        return 0.0;
    };
    let k = first.len();
    if k == 0 {
        return 0.0;
    }
    let n = likelihoods.len() as f64;
    let total: f64 = (0..k)
        .map(|c| {
            let mean = likelihoods.iter().map(|r| r[c]).sum::<f64>() / n;
            if mean <= 0.0 {
                return 0.0;
            }
            let var = likelihoods.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            var.sqrt() / mean
        })
        .sum();
    (total / k as f64).clamp(0.0, 1.0)
}

/// Mean over instances of the gap between the two most probable concepts,
/// with each posterior row normalized to a distribution over concepts.
pub fn prediction_margin(posteriors: &[Vec<f64>]) -> Result<f64> {
    let Some(first) = posteriors.first() else {
        return Ok(0.0);
    };
    if first.len() < 2 {
        return Err(Error::Contract("prediction margin needs at least two concepts".into()));
    }
    let total: f64 = posteriors
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in row {
                if p > top {
                    second = top;
                    top = p;
                } else if p > second {
                    second = p;
                }
            }
            if s > 0.0 {
                (top - second) / s
            } else {
                0.0
            }
        })
        .sum();
    Ok((total / posteriors.len() as f64).clamp(0.0, 1.0))
}

pub fn budget_consumption(spent: u32, total: u32) -> f64 {
    if total == 0 {
        // Nothing was ever available to spend.
        return 1.0;
    }
    (spent as f64 / total as f64).clamp(0.0, 1.0)
}

pub fn remaining_time_usage(turn: u32, total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (total.saturating_sub(turn) as f64 / total as f64).clamp(0.0, 1.0)
}

/// Trailing run of no-query turns, capped at the window, over the window size.
pub fn non_query_time(history: &[HistoryEntry], window: u32) -> f64 {
    if window == 0 {
        return 0.0;
    }
    let run = history
        .iter()
        .rev()
        .take_while(|h| h.action == ActionKind::NoQuery)
        .take(window as usize)
        .count();
    run as f64 / window as f64
}

/// All seven features of a state whose posteriors are current.
pub fn feature_vector(state: &LearningState, window: u32) -> DecisionFeatureVector {
    let post = state.posteriors();
    let likelihoods = class_likelihoods(post);
    DecisionFeatureVector {
        acd: classifier_discriminability(post),
        cdu: class_distribution_uniformity(state.sample(), state.n_concepts()),
        iv: instance_variation(&likelihoods),
        pm: prediction_margin(post).unwrap_or(0.0),
        qbc: budget_consumption(state.budget_spent(), state.budget_total()),
        rtu: remaining_time_usage(state.turn(), state.time_total()),
        nqt: non_query_time(state.history(), window),
    }
}
