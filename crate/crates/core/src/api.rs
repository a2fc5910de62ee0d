//! Wire types of the session service, shared by the server and its client.
//! Every payload carries `v`, the protocol version.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, AnswerSummary, EpisodeConfig, InstanceId};
use crate::features::NUM_FEATURES;
use crate::strategies::StrategyId;
use crate::trajectory::Step;

pub const API_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// A human picks the learner's action each turn; the simulated teacher answers.
    Demonstrate,
    /// The learner's strategy picks actions; a human answers its queries.
    Teach,
    /// The strategy picks and the simulated teacher answers, one turn per request.
    Observe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Health {
    pub v: u32,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskInfo {
    pub name: String,
    pub concepts: Vec<String>,
    pub feature_dim: usize,
    pub phases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskList {
    pub v: u32,
    pub tasks: Vec<TaskInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateSession {
    pub v: u32,
    pub task: String,
    pub config: EpisodeConfig,
    pub mode: SessionMode,
    /// Weights used by the strategy in teach and observe mode and for the
    /// utility preview in demonstrate mode. Defaults to uniform weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Repeating a create with the same key returns the original session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneInstanceView {
    pub id: InstanceId,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneView {
    pub index: u32,
    pub phase: usize,
    pub instances: Vec<SceneInstanceView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateView {
    pub action: ActionKind,
    pub cost: u32,
    pub expected_utility: f64,
}

/// The query a teach-mode session is waiting on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PendingQuery {
    pub action: ActionKind,
    /// Concept id named by a demonstration query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub v: u32,
    pub id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub task: String,
    pub strategy: StrategyId,
    /// Token a mutation must echo; it changes whenever the session advances.
    pub turn_token: u64,
    /// The turn about to be played, 1-based.
    pub turn: u32,
    pub time_total: u32,
    pub budget_total: u32,
    pub budget_spent: u32,
    pub phi: [f64; NUM_FEATURES],
    pub accuracy: f64,
    /// Feature indices installed by an answered feature subset query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_subset: Option<Vec<usize>>,
    pub scene: SceneView,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingQuery>,
    pub history: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateList {
    pub v: u32,
    pub turn_token: u64,
    pub candidates: Vec<CandidateView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DemonstrateStep {
    pub v: u32,
    pub turn_token: u64,
    pub action: ActionKind,
}

/// A human teacher's reply. Concepts are named by id, demonstrations by the
/// id of an instance in the current scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum HumanAnswer {
    Label { concept: String },
    Demo { instance: InstanceId },
    FeatureSubset { features: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TeachStep {
    pub v: u32,
    pub turn_token: u64,
    pub answer: HumanAnswer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObserveStep {
    pub v: u32,
    pub turn_token: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepResult {
    pub v: u32,
    pub action: ActionKind,
    pub answer: AnswerSummary,
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorBody {
    pub v: u32,
    pub code: String,
    pub message: String,
}
