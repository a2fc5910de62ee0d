//! Core vocabulary: instances, scenes, query actions, learning state and
//! episode configuration.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::ClassifierSpec;
use crate::strategies::StrategyId;

/// Index of a concept in the task's declared concept list.
pub type ConceptIdx = usize;
pub type InstanceId = u64;

/// One observed object: a feature vector plus hidden ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Instance {
    pub id: InstanceId,
    pub features: Vec<f64>,
    /// Visible to the oracle and the evaluator only.
    pub true_labels: Vec<ConceptIdx>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Concept {
    pub id: String,
    #[serde(default)]
    pub relevant_features: Vec<usize>,
    /// Lower value wins when an instance carries several labels.
    #[serde(default)]
    pub priority: u32,
}

/// The set of objects in the learner's purview at a turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scene {
    pub turn: u32,
    /// Scene refresh counter (0 for the first scene of an episode).
    pub index: u32,
    pub phase: usize,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn new(turn: u32, index: u32, phase: usize, instances: Vec<Instance>) -> Result<Self> {
        if turn < 1 {
            return Err(Error::Input("scene turn must be >= 1".into()));
        }
        if instances.is_empty() {
            return Err(Error::Input("scene has no instances".into()));
        }
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id) {
                return Err(Error::Input(format!("duplicate instance id {} in scene", inst.id)));
            }
        }
        Ok(Scene {
            turn,
            index,
            phase,
            instances,
        })
    }

    pub fn get(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn position(&self, id: InstanceId) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// The four communicative actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg")]
pub enum ActionKind {
    #[serde(rename = "DQ")]
    DemoQuery(ConceptIdx),
    #[serde(rename = "LQ")]
    LabelQuery(InstanceId),
    #[serde(rename = "FSQ")]
    FeatureSubsetQuery,
    #[serde(rename = "NQ")]
    NoQuery,
}

impl ActionKind {
    pub fn is_query(&self) -> bool {
        !matches!(self, ActionKind::NoQuery)
    }

    /// Deterministic tie-break key: cheaper kinds first, then lowest id.
    pub fn tie_rank(&self) -> (u8, u64) {
        match *self {
            ActionKind::NoQuery => (0, 0),
            ActionKind::FeatureSubsetQuery => (1, 0),
            ActionKind::LabelQuery(id) => (2, id),
            ActionKind::DemoQuery(c) => (3, c as u64),
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::DemoQuery(c) => write!(f, "DQ({c})"),
            ActionKind::LabelQuery(x) => write!(f, "LQ({x})"),
            ActionKind::FeatureSubsetQuery => f.write_str("FSQ"),
            ActionKind::NoQuery => f.write_str("NQ"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    #[serde(flatten)]
    pub kind: ActionKind,
    pub cost: u32,
}

/// A-priori query costs in abstract cost units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CostTable {
    pub demo_query: u32,
    pub label_query: u32,
    pub feature_subset_query: u32,
    pub no_query: u32,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            demo_query: 2,
            label_query: 1,
            feature_subset_query: 2,
            no_query: 0,
        }
    }
}

impl CostTable {
    pub fn cost_of(&self, kind: &ActionKind) -> u32 {
        match kind {
            ActionKind::DemoQuery(_) => self.demo_query,
            ActionKind::LabelQuery(_) => self.label_query,
            ActionKind::FeatureSubsetQuery => self.feature_subset_query,
            ActionKind::NoQuery => self.no_query,
        }
    }

    pub fn action(&self, kind: ActionKind) -> Action {
        Action {
            kind,
            cost: self.cost_of(&kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

/// A labeled observation under one-vs-rest semantics: positive for
/// `concept`, negative for every other concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub concept: ConceptIdx,
}

impl LabeledExample {
    pub fn polarity_for(&self, concept: ConceptIdx) -> Polarity {
        if self.concept == concept {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// What the teacher said, in the form the learner consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum OracleAnswer {
    Label { concept: ConceptIdx },
    Demo { instance: Instance, concept: ConceptIdx },
    FeatureSubset { features: Vec<usize> },
    NoAnswer,
}

impl OracleAnswer {
    pub fn summary(&self) -> AnswerSummary {
        match self {
            OracleAnswer::Label { concept } => AnswerSummary::Label { concept: *concept },
            OracleAnswer::Demo { instance, concept } => AnswerSummary::Demo {
                instance: instance.id,
                concept: *concept,
            },
            OracleAnswer::FeatureSubset { features } => AnswerSummary::FeatureSubset {
                features: features.clone(),
            },
            OracleAnswer::NoAnswer => AnswerSummary::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum AnswerSummary {
    Label { concept: ConceptIdx },
    Demo { instance: InstanceId, concept: ConceptIdx },
    FeatureSubset { features: Vec<usize> },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub turn: u32,
    pub action: ActionKind,
    pub cost: u32,
    pub answer: AnswerSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeConfig {
    pub budget: u32,
    pub time_allocation: u32,
    pub scene_change_period: u32,
    /// Sliding window for non-query time, in turns.
    pub window_size: u32,
    pub strategy: StrategyId,
    #[serde(default)]
    pub costs: CostTable,
    pub seed: u64,
    #[serde(default = "default_scene_size")]
    pub scene_size: usize,
    /// Answer size assumed when simulating a feature subset query.
    #[serde(default)]
    pub fsq_proxy_size: Option<usize>,
    #[serde(default)]
    pub classifier: ClassifierSpec,
}

fn default_scene_size() -> usize {
    8
}

impl EpisodeConfig {
    pub fn new(budget: u32, time_allocation: u32, scene_change_period: u32, strategy: StrategyId, seed: u64) -> Self {
        EpisodeConfig {
            budget,
            time_allocation,
            scene_change_period,
            window_size: scene_change_period + scene_change_period / 2,
            strategy,
            costs: CostTable::default(),
            seed,
            scene_size: default_scene_size(),
            fsq_proxy_size: None,
            classifier: ClassifierSpec::default(),
        }
    }

    /// Strict validation used by user-facing entry points. The engine itself
    /// tolerates a zero budget (every turn is then a no-query turn).
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        self.validate_engine()
    }

    pub(crate) fn validate_engine(&self) -> Result<()> {
        let positive = [
            ("timeAllocation", self.time_allocation),
            ("sceneChangePeriod", self.scene_change_period),
            ("windowSize", self.window_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.scene_size == 0 {
            return Err(Error::Config("sceneSize must be positive".into()));
        }
        if self.fsq_proxy_size == Some(0) {
            return Err(Error::Config("fsqProxySize must be positive".into()));
        }
        self.classifier.validate()
    }
}

/// Learner state at the start of a turn. Transitions return new values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LearningState {
    n_concepts: usize,
    feature_dim: usize,
    sample: Vec<LabeledExample>,
    /// Rows follow the current scene's instance order, columns the concepts.
    posteriors: Vec<Vec<f64>>,
    history: Vec<HistoryEntry>,
    budget_total: u32,
    budget_spent: u32,
    time_total: u32,
    turn: u32,
    fsq_answered: bool,
    active_subset: Option<Vec<usize>>,
    costs: CostTable,
    models_stale: bool,
}

impl LearningState {
    pub fn new(config: &EpisodeConfig, n_concepts: usize, feature_dim: usize) -> Self {
        LearningState {
            n_concepts,
            feature_dim,
            sample: Vec::new(),
            posteriors: Vec::new(),
            history: Vec::new(),
            budget_total: config.budget,
            budget_spent: 0,
            time_total: config.time_allocation,
            turn: 0,
            fsq_answered: false,
            active_subset: None,
            costs: config.costs,
            models_stale: false,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    pub fn sample(&self) -> &[LabeledExample] {
        &self.sample
    }
    pub fn posteriors(&self) -> &[Vec<f64>] {
        &self.posteriors
    }
    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }
    pub fn budget_total(&self) -> u32 {
        self.budget_total
    }
    pub fn budget_spent(&self) -> u32 {
        self.budget_spent
    }
    pub fn budget_remaining(&self) -> u32 {
        self.budget_total - self.budget_spent
    }
    pub fn time_total(&self) -> u32 {
        self.time_total
    }
    /// Number of completed turns.
    pub fn turn(&self) -> u32 {
        self.turn
    }
    pub fn fsq_answered(&self) -> bool {
        self.fsq_answered
    }
    pub fn active_subset(&self) -> Option<&[usize]> {
        self.active_subset.as_deref()
    }
    pub fn costs(&self) -> &CostTable {
        &self.costs
    }
    pub fn models_stale(&self) -> bool {
        self.models_stale
    }
    pub fn is_finished(&self) -> bool {
        self.turn >= self.time_total
    }

    /// Expanded one-vs-rest training triples.
    pub fn training_triples(&self) -> impl Iterator<Item = (&[f64], ConceptIdx, Polarity)> + '_ {
        self.sample.iter().flat_map(move |ex| {
            (0..self.n_concepts).map(move |c| (ex.features.as_slice(), c, ex.polarity_for(c)))
        })
    }

    /// Installs freshly computed posteriors for the current scene.
    pub fn with_posteriors(mut self, posteriors: Vec<Vec<f64>>) -> Result<Self> {
        for row in &posteriors {
            if row.len() != self.n_concepts {
                return Err(Error::Input(format!(
                    "posterior row has {} columns, expected {}",
                    row.len(),
                    self.n_concepts
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input("posterior entry outside [0,1]".into()));
            }
        }
        self.posteriors = posteriors;
        self.models_stale = false;
        Ok(self)
    }

    pub fn can_afford(&self, kind: &ActionKind) -> bool {
        self.costs.cost_of(kind) <= self.budget_remaining()
    }

    /// One-turn transition: validates the action against the state, folds the
    /// answer into the training sample and charges the action's cost.
    pub fn apply_answer(&self, scene: &Scene, action: &ActionKind, answer: &OracleAnswer) -> Result<Self> {
        if self.is_finished() {
            return Err(Error::EpisodeFinished(self.turn));
        }
        let cost = self.costs.cost_of(action);
        if cost > self.budget_remaining() {
            return Err(Error::BudgetExceeded {
                spent: self.budget_spent,
                cost,
                budget: self.budget_total,
            });
        }
        let mut next = self.clone();
        match (action, answer) {
            (ActionKind::NoQuery, OracleAnswer::NoAnswer) => {}
            (ActionKind::LabelQuery(id), OracleAnswer::Label { concept }) => {
                let inst = scene
                    .get(*id)
                    .ok_or_else(|| Error::Contract(format!("instance {id} is not in the current scene")))?;
                self.check_concept(*concept)?;
                self.check_dim(&inst.features)?;
                next.sample.push(LabeledExample {
                    features: inst.features.clone(),
                    concept: *concept,
                });
                next.models_stale = true;
            }
            (ActionKind::DemoQuery(asked), OracleAnswer::Demo { instance, concept }) => {
                self.check_concept(*asked)?;
                if asked != concept {
                    return Err(Error::Contract(format!(
                        "demonstration for concept {concept} answers a query for concept {asked}"
                    )));
                }
                self.check_dim(&instance.features)?;
                next.sample.push(LabeledExample {
                    features: instance.features.clone(),
                    concept: *concept,
                });
                next.models_stale = true;
            }
            (ActionKind::FeatureSubsetQuery, OracleAnswer::FeatureSubset { features }) => {
                if self.fsq_answered {
                    return Err(Error::Contract("feature subset query already answered".into()));
                }
                let subset = normalize_subset(features, self.feature_dim)?;
                next.fsq_answered = true;
                next.active_subset = Some(subset);
                next.models_stale = true;
            }
            (a, b) => {
                return Err(Error::Contract(format!("answer {b:?} does not match action {a}")));
            }
        }
        next.budget_spent += cost;
        next.turn += 1;
        next.history.push(HistoryEntry {
            turn: next.turn,
            action: *action,
            cost,
            answer: answer.summary(),
        });
        Ok(next)
    }

    fn check_concept(&self, c: ConceptIdx) -> Result<()> {
        if c >= self.n_concepts {
            return Err(Error::Input(format!("unknown concept index {c}")));
        }
        Ok(())
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.feature_dim {
            return Err(Error::Input(format!(
                "feature vector has length {}, expected {}",
                f.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }
}

/// Sorts and validates a feature index set.
pub fn normalize_subset(features: &[usize], dim: usize) -> Result<Vec<usize>> {
    if features.is_empty() {
        return Err(Error::Input("feature subset is empty".into()));
    }
    let mut s = features.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&bad) = s.iter().find(|&&f| f >= dim) {
        return Err(Error::Input(format!("feature index {bad} out of range (dim {dim})")));
    }
    Ok(s)
}

/// Candidate actions in declaration order: DQ per concept, LQ per scene
/// instance, FSQ (until answered), NQ. Unaffordable queries are dropped, so
/// an exhausted budget leaves only NQ.
pub fn candidate_actions(state: &LearningState, scene: &Scene) -> Vec<Action> {
    let costs = state.costs;
    let mut out = Vec::with_capacity(state.n_concepts + scene.len() + 2);
    if !state.is_finished() && state.budget_spent < state.budget_total {
        out.extend((0..state.n_concepts).map(|c| costs.action(ActionKind::DemoQuery(c))));
        out.extend(scene.instances.iter().map(|x| costs.action(ActionKind::LabelQuery(x.id))));
        if !state.fsq_answered {
            out.push(costs.action(ActionKind::FeatureSubsetQuery));
        }
        out.retain(|a| state.can_afford(&a.kind));
    }
    out.push(costs.action(ActionKind::NoQuery));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(n: usize, dim: usize) -> Scene {
        let instances = (0..n)
            .map(|i| Instance {
                id: i as u64 + 1,
                features: vec![i as f64; dim],
                true_labels: vec![0],
            })
            .collect();
        Scene::new(1, 0, 0, instances).unwrap()
    }

    fn config(budget: u32, time: u32) -> EpisodeConfig {
        EpisodeConfig::new(budget, time, 10, StrategyId::DtTaskEnv, 1)
    }

    #[test]
    fn candidate_count_is_y_plus_x_plus_two() {
        let s = LearningState::new(&config(25, 40), 4, 3);
        let acts = candidate_actions(&s, &scene(6, 3));
        assert_eq!(acts.len(), 12);
        assert_eq!(acts.iter().filter(|a| a.kind == ActionKind::FeatureSubsetQuery).count(), 1);
        assert_eq!(acts.last().unwrap().kind, ActionKind::NoQuery);
    }

    #[test]
    fn exhausted_budget_leaves_only_no_query() {
        let sc = scene(2, 1);
        let mut s = LearningState::new(&config(1, 40), 2, 1);
        s = s.apply_answer(&sc, &ActionKind::LabelQuery(1), &OracleAnswer::Label { concept: 0 }).unwrap();
        let acts = candidate_actions(&s, &sc);
        assert_eq!(acts, vec![Action { kind: ActionKind::NoQuery, cost: 0 }]);
    }

    #[test]
    fn fsq_dropped_after_answer() {
        let sc = scene(1, 3);
        let s = LearningState::new(&config(25, 40), 1, 3)
            .apply_answer(&sc, &ActionKind::FeatureSubsetQuery, &OracleAnswer::FeatureSubset { features: vec![2, 0] })
            .unwrap();
        let acts = candidate_actions(&s, &sc);
        assert_eq!(acts.len(), 3);
        assert!(acts.iter().all(|a| a.kind != ActionKind::FeatureSubsetQuery));
        assert_eq!(s.active_subset(), Some(&[0usize, 2][..]));
        assert!(s.models_stale());
        let again = s.apply_answer(&sc, &ActionKind::FeatureSubsetQuery, &OracleAnswer::FeatureSubset { features: vec![1] });
        assert!(matches!(again, Err(Error::Contract(_))));
    }

    #[test]
    fn label_answer_is_one_vs_rest() {
        let sc = scene(3, 2);
        let s = LearningState::new(&config(25, 40), 4, 2);
        let next = s.apply_answer(&sc, &ActionKind::LabelQuery(2), &OracleAnswer::Label { concept: 1 }).unwrap();
        assert_eq!(next.budget_spent(), 1);
        let triples: Vec<_> = next.training_triples().collect();
        assert_eq!(triples.len(), 4);
        assert_eq!(triples.iter().filter(|t| t.2 == Polarity::Positive).count(), 1);
        assert!(triples.iter().any(|t| t.1 == 1 && t.2 == Polarity::Positive));
        assert_eq!(next.history().len(), 1);
        assert_eq!(next.turn(), 1);
    }

    #[test]
    fn no_query_only_moves_time() {
        let sc = scene(3, 2);
        let s = LearningState::new(&config(25, 40), 4, 2);
        let next = s.apply_answer(&sc, &ActionKind::NoQuery, &OracleAnswer::NoAnswer).unwrap();
        assert_eq!(next.sample(), s.sample());
        assert_eq!(next.budget_spent(), 0);
        assert_eq!(next.turn(), 1);
        assert_eq!(next.history().len(), 1);
    }

    #[test]
    fn mismatched_answer_is_contract_violation() {
        let sc = scene(3, 2);
        let s = LearningState::new(&config(25, 40), 2, 2);
        let r = s.apply_answer(&sc, &ActionKind::LabelQuery(1), &OracleAnswer::NoAnswer);
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = s.apply_answer(&sc, &ActionKind::LabelQuery(99), &OracleAnswer::Label { concept: 0 });
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn budget_is_enforced() {
        let sc = scene(3, 2);
        let s = LearningState::new(&config(1, 40), 2, 2);
        let r = s.apply_answer(&sc, &ActionKind::FeatureSubsetQuery, &OracleAnswer::FeatureSubset { features: vec![0] });
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn apply_is_pure() {
        let sc = scene(3, 2);
        let s = LearningState::new(&config(5, 40), 2, 2);
        let a = s.apply_answer(&sc, &ActionKind::LabelQuery(3), &OracleAnswer::Label { concept: 1 }).unwrap();
        let b = s.apply_answer(&sc, &ActionKind::LabelQuery(3), &OracleAnswer::Label { concept: 1 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finished_episode_rejects_actions() {
        let sc = scene(1, 1);
        let mut s = LearningState::new(&config(5, 1), 1, 1);
        s = s.apply_answer(&sc, &ActionKind::NoQuery, &OracleAnswer::NoAnswer).unwrap();
        assert!(matches!(
            s.apply_answer(&sc, &ActionKind::NoQuery, &OracleAnswer::NoAnswer),
            Err(Error::EpisodeFinished(1))
        ));
    }

    #[test]
    fn action_wire_format() {
        let j = serde_json::to_string(&ActionKind::LabelQuery(4)).unwrap();
        assert_eq!(j, r#"{"kind":"LQ","arg":4}"#);
        let j = serde_json::to_string(&ActionKind::NoQuery).unwrap();
        assert_eq!(j, r#"{"kind":"NQ"}"#);
        let back: ActionKind = serde_json::from_str(r#"{"kind":"DQ","arg":2}"#).unwrap();
        assert_eq!(back, ActionKind::DemoQuery(2));
    }
}
