//! Environment-aware active learning engine.
//!
//! A learner grounds a set of concepts in a changing scene stream by posing
//! demonstration, label and feature-subset queries to a teacher. Query
//! selection is by expected utility over seven decision features; the feature
//! weights are learned from expert questioning trajectories with
//! maximum-entropy inverse reinforcement learning.

pub mod api;
pub mod domain;
pub mod envsim;
pub mod episode;
pub mod error;
pub mod features;
pub mod fsio;
pub mod gp;
pub mod irl;
pub mod rng;
pub mod stats;
pub mod strategies;
pub mod trajectory;

pub use domain::{
    candidate_actions, Action, ActionKind, AnswerSummary, ConceptIdx, CostTable, EpisodeConfig,
    Instance, InstanceId, LabeledExample, LearningState, Polarity, Scene,
};
pub use error::{Error, Result};
pub use features::{DecisionFeatureVector, FEATURE_NAMES, NUM_FEATURES};
pub use strategies::{Strategy, StrategyId, WeightVector};
