//! Questioning policies: uncertainty sampling and the three decision-theoretic
//! arbitrators that score every candidate action by expected utility over a
//! one-step outcome simulation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{candidate_actions, ActionKind, ConceptIdx, InstanceId, LearningState, OracleAnswer, Scene};
use crate::error::{Error, Result};
use crate::features::{feature_vector, DecisionFeatureVector, NUM_FEATURES};
use crate::gp::{targets_for, ClassifierBackend, ClassifierEnsemble, Design};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "u-sampling")]
    USampling,
    #[serde(rename = "dt-iros")]
    DtIros,
    #[serde(rename = "dt-task")]
    DtTask,
    #[serde(rename = "dt-task-env")]
    DtTaskEnv,
}

impl StrategyId {
    pub const ALL: [StrategyId; 4] = [
        StrategyId::USampling,
        StrategyId::DtIros,
        StrategyId::DtTask,
        StrategyId::DtTaskEnv,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyId::USampling => "u-sampling",
            StrategyId::DtIros => "dt-iros",
            StrategyId::DtTask => "dt-task",
            StrategyId::DtTaskEnv => "dt-task-env",
        }
    }

    pub fn feature_set(&self) -> Option<FeatureSet> {
        match self {
            StrategyId::USampling => None,
            StrategyId::DtIros => Some(FeatureSet::Iros),
            StrategyId::DtTask => Some(FeatureSet::Task),
            StrategyId::DtTaskEnv => Some(FeatureSet::TaskEnv),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

/// Which decision features a decision-theoretic variant reasons over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Iros,
    Task,
    TaskEnv,
}

impl FeatureSet {
    pub fn indices(&self) -> &'static [usize] {
        match self {
            FeatureSet::Iros => &[0, 1],
            FeatureSet::Task => &[0, 1, 2, 3],
            FeatureSet::TaskEnv => &[0, 1, 2, 3, 4, 5, 6],
        }
    }
}

/// Utility weights over one feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    set: FeatureSet,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(set: FeatureSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != set.indices().len() {
            return Err(Error::Config(format!(
                "{set:?} needs {} weights, got {}",
                set.indices().len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("non-finite weight".into()));
        }
        if weights.iter().map(|w| w.abs()).sum::<f64>() <= 0.0 {
            return Err(Error::Config("weight vector must have a nonzero entry".into()));
        }
        Ok(WeightVector { set, weights })
    }

    pub fn uniform(set: FeatureSet) -> Self {
        let k = set.indices().len();
        WeightVector {
            set,
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn set(&self) -> FeatureSet {
        self.set
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Zero-padded weights over all seven features.
    pub fn full(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for (&i, &w) in self.set.indices().iter().zip(&self.weights) {
            out[i] = w;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightVector {
            set: self.set,
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }
}

pub fn utility(weights: &[f64; NUM_FEATURES], phi: &DecisionFeatureVector) -> f64 {
    weights.iter().zip(phi.to_array()).map(|(w, f)| w * f).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: StrategyId,
    pub weights: Option<WeightVector>,
}

impl Strategy {
    /// Uniform weights for the decision-theoretic variants.
    pub fn baseline(id: StrategyId) -> Self {
        Strategy {
            id,
            weights: id.feature_set().map(WeightVector::uniform),
        }
    }

    pub fn with_weights(id: StrategyId, weights: WeightVector) -> Result<Self> {
        match id.feature_set() {
            Some(set) if set == weights.set => Ok(Strategy {
                id,
                weights: Some(weights),
            }),
            Some(set) => Err(Error::Config(format!("{id} expects {set:?} weights, got {:?}", weights.set))),
            None => Err(Error::Config(format!("{id} takes no weights"))),
        }
    }

    pub fn select(&self, ctx: &LookaheadContext, state: &LearningState, scene: &Scene) -> Result<ActionKind> {
        match &self.weights {
            None => Ok(u_sampling_select(state, scene)),
            Some(w) => dt_select(ctx, state, scene, &w.full()),
        }
    }
}

/// Shannon entropy (nats) of a posterior row normalized over concepts.
pub fn entropy_score(row: &[f64]) -> f64 {
    let s: f64 = row.iter().sum();
    if s <= 0.0 {
        return 0.0;
    }
    -row.iter()
        .map(|&p| p / s)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>()
}

/// Label query for the most uncertain scene instance while budget and time
/// remain; otherwise no query. Ties go to the lowest instance id.
pub fn u_sampling_select(state: &LearningState, scene: &Scene) -> ActionKind {
    if state.is_finished() || state.budget_spent() >= state.budget_total() {
        return ActionKind::NoQuery;
    }
    if !state.can_afford(&ActionKind::LabelQuery(0)) {
        return ActionKind::NoQuery;
    }
    let post = state.posteriors();
    let mut best: Option<(f64, InstanceId)> = None;
    for (i, inst) in scene.instances.iter().enumerate() {
        let h = post.get(i).map_or(0.0, |r| entropy_score(r));
        best = match best {
            Some((bh, bid)) if bh > h || (bh == h && bid < inst.id) => Some((bh, bid)),
            _ => Some((h, inst.id)),
        };
    }
    best.map_or(ActionKind::NoQuery, |(_, id)| ActionKind::LabelQuery(id))
}

/// Everything needed to simulate successor states.
#[derive(Clone, Debug)]
pub struct LookaheadContext {
    pub backend: Arc<dyn ClassifierBackend>,
    pub window: u32,
    /// Number of features assumed in a feature-subset answer.
    pub fsq_proxy_size: usize,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub probability: f64,
    pub state: LearningState,
}

#[derive(Clone, Debug)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<Outcome>,
}

impl OutcomeDistribution {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|o| o.probability).sum()
    }
}

type ColumnKey = (InstanceId, ConceptIdx, bool);

/// One-step outcome simulator for a fixed (state, scene). Refits are cached:
/// a label on instance `x` only changes classifier `c` through the polarity of
/// `x`, so each (x, c, polarity) is fitted once and shared by every LQ outcome
/// and DQ successor that needs it.
pub struct Lookahead<'a> {
    ctx: &'a LookaheadContext,
    state: &'a LearningState,
    scene: &'a Scene,
    designs: RefCell<HashMap<InstanceId, Arc<dyn Design>>>,
    columns: RefCell<HashMap<ColumnKey, Vec<f64>>>,
    fsq: RefCell<Option<(Vec<usize>, Vec<Vec<f64>>)>>,
}

impl<'a> Lookahead<'a> {
    pub fn new(ctx: &'a LookaheadContext, state: &'a LearningState, scene: &'a Scene) -> Result<Self> {
        if state.posteriors().len() != scene.len() {
            return Err(Error::Contract(format!(
                "state holds posteriors for {} instances, scene has {}",
                state.posteriors().len(),
                scene.len()
            )));
        }
        Ok(Lookahead {
            ctx,
            state,
            scene,
            designs: RefCell::new(HashMap::new()),
            columns: RefCell::new(HashMap::new()),
            fsq: RefCell::new(None),
        })
    }

    fn scene_inputs(&self) -> Vec<&'a [f64]> {
        self.scene.instances.iter().map(|i| i.features.as_slice()).collect()
    }

    fn design_with(&self, id: InstanceId) -> Result<Arc<dyn Design>> {
        if let Some(d) = self.designs.borrow().get(&id) {
            return Ok(d.clone());
        }
        let x = self
            .scene
            .get(id)
            .ok_or_else(|| Error::Contract(format!("instance {id} is not in the scene")))?;
        let mut inputs: Vec<&[f64]> = self.state.sample().iter().map(|e| e.features.as_slice()).collect();
        inputs.push(&x.features);
        let design = self
            .ctx
            .backend
            .prepare(&inputs, self.state.feature_dim(), self.state.active_subset())?;
        self.designs.borrow_mut().insert(id, design.clone());
        Ok(design)
    }

    fn column(&self, id: InstanceId, concept: ConceptIdx, positive: bool) -> Result<Vec<f64>> {
        let key = (id, concept, positive);
        if let Some(c) = self.columns.borrow().get(&key) {
            return Ok(c.clone());
        }
        let design = self.design_with(id)?;
        let mut targets = targets_for(self.state.sample(), concept);
        targets.push(if positive { 1.0 } else { -1.0 });
        let model = design.fit(&targets)?;
        let col = model.predict_batch(&self.scene_inputs())?;
        self.columns.borrow_mut().insert(key, col.clone());
        Ok(col)
    }

    /// Posteriors after labeling scene instance `id` as `label`.
    fn posteriors_with_label(&self, id: InstanceId, label: ConceptIdx) -> Result<Vec<Vec<f64>>> {
        let k = self.state.n_concepts();
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|c| self.column(id, c, c == label))
            .collect::<Result<_>>()?;
        Ok((0..self.scene.len()).map(|i| cols.iter().map(|col| col[i]).collect()).collect())
    }

    fn fsq_successor(&self) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        if let Some(v) = self.fsq.borrow().as_ref() {
            return Ok(v.clone());
        }
        let subset = proxy_feature_subset(self.state.sample(), self.state.feature_dim(), self.ctx.fsq_proxy_size);
        let ens = ClassifierEnsemble::fit(
            self.ctx.backend.as_ref(),
            self.state.sample(),
            self.state.n_concepts(),
            self.state.feature_dim(),
            Some(&subset),
        )?;
        let post = ens.posterior_matrix(&self.scene.instances)?;
        *self.fsq.borrow_mut() = Some((subset.clone(), post.clone()));
        Ok((subset, post))
    }

    /// Scene instance most likely to be picked as an example of `concept`.
    fn demo_instance(&self, concept: ConceptIdx) -> Result<InstanceId> {
        let post = self.state.posteriors();
        let mut best: Option<(f64, InstanceId)> = None;
        for (i, inst) in self.scene.instances.iter().enumerate() {
            let p = post[i][concept];
            best = match best {
                Some((bp, bid)) if bp > p || (bp == p && bid < inst.id) => Some((bp, bid)),
                _ => Some((p, inst.id)),
            };
        }
        best.map(|(_, id)| id)
            .ok_or_else(|| Error::Contract("empty scene".into()))
    }

    pub fn outcomes(&self, action: &ActionKind) -> Result<OutcomeDistribution> {
        let legal = candidate_actions(self.state, self.scene);
        if !legal.iter().any(|a| a.kind == *action) {
            return Err(Error::Contract(format!("{action} is not a candidate action")));
        }
        let scene = self.scene;
        let outcomes = match *action {
            ActionKind::NoQuery => {
                let s = self.state.apply_answer(scene, action, &OracleAnswer::NoAnswer)?;
                let post = self.state.posteriors().to_vec();
                vec![Outcome {
                    probability: 1.0,
                    state: s.with_posteriors(post)?,
                }]
            }
            ActionKind::LabelQuery(id) => {
                let pos = scene.position(id).expect("candidate instance is in the scene");
                let row = &self.state.posteriors()[pos];
                let total: f64 = row.iter().sum();
                let k = row.len();
                let mut out = Vec::with_capacity(k);
                for (y, &p) in row.iter().enumerate() {
                    let prob = if total > 0.0 { p / total } else { 1.0 / k as f64 };
                    let s = self
                        .state
                        .apply_answer(scene, action, &OracleAnswer::Label { concept: y })?;
                    out.push(Outcome {
                        probability: prob,
                        state: s.with_posteriors(self.posteriors_with_label(id, y)?)?,
                    });
                }
                out
            }
            ActionKind::DemoQuery(y) => {
                let id = self.demo_instance(y)?;
                let inst = scene.get(id).expect("demo instance is in the scene").clone();
                let s = self.state.apply_answer(
                    scene,
                    action,
                    &OracleAnswer::Demo {
                        instance: inst,
                        concept: y,
                    },
                )?;
                vec![Outcome {
                    probability: 1.0,
                    state: s.with_posteriors(self.posteriors_with_label(id, y)?)?,
                }]
            }
            ActionKind::FeatureSubsetQuery => {
                let (subset, post) = self.fsq_successor()?;
                let s = self
                    .state
                    .apply_answer(scene, action, &OracleAnswer::FeatureSubset { features: subset })?;
                vec![Outcome {
                    probability: 1.0,
                    state: s.with_posteriors(post)?,
                }]
            }
        };
        Ok(OutcomeDistribution { outcomes })
    }

    pub fn expected_utility(&self, action: &ActionKind, weights: &[f64; NUM_FEATURES]) -> Result<f64> {
        let dist = self.outcomes(action)?;
        Ok(dist
            .outcomes
            .iter()
            .map(|o| o.probability * utility(weights, &feature_vector(&o.state, self.ctx.window)))
            .sum())
    }

    /// Expected successor feature vector of every candidate, in candidate order.
    pub fn expected_features(&self) -> Result<Vec<(ActionKind, [f64; NUM_FEATURES])>> {
        candidate_actions(self.state, self.scene)
            .into_iter()
            .map(|a| {
                let dist = self.outcomes(&a.kind)?;
                let mut acc = [0.0; NUM_FEATURES];
                for o in &dist.outcomes {
                    let phi = feature_vector(&o.state, self.ctx.window).to_array();
                    for (s, v) in acc.iter_mut().zip(phi) {
                        *s += o.probability * v;
                    }
                }
                Ok((a.kind, acc))
            })
            .collect()
    }
}

pub fn simulate_outcomes(
    ctx: &LookaheadContext,
    state: &LearningState,
    scene: &Scene,
    action: &ActionKind,
) -> Result<OutcomeDistribution> {
    Lookahead::new(ctx, state, scene)?.outcomes(action)
}

pub fn expected_utility(
    ctx: &LookaheadContext,
    state: &LearningState,
    scene: &Scene,
    action: &ActionKind,
    weights: &[f64; NUM_FEATURES],
) -> Result<f64> {
    Lookahead::new(ctx, state, scene)?.expected_utility(action, weights)
}

/// Expected utilities of all candidates. EU is linear in the successor
/// features, so it is computed from the expected feature vectors.
pub fn score_candidates(
    ctx: &LookaheadContext,
    state: &LearningState,
    scene: &Scene,
    weights: &[f64; NUM_FEATURES],
) -> Result<Vec<(ActionKind, f64)>> {
    let feats = Lookahead::new(ctx, state, scene)?.expected_features()?;
    Ok(feats
        .into_iter()
        .map(|(a, phi)| (a, weights.iter().zip(phi).map(|(w, f)| w * f).sum()))
        .collect())
}

/// Argmax of scored candidates; near-ties (relative to the weight scale) go
/// to the cheaper action, then the lower id.
pub fn argmax_action(scored: &[(ActionKind, f64)], weights: &[f64; NUM_FEATURES]) -> ActionKind {
    let tol = 1e-12 * weights.iter().map(|w| w.abs()).sum::<f64>().max(1.0);
    let mut order: Vec<&(ActionKind, f64)> = scored.iter().collect();
    order.sort_by_key(|(a, _)| a.tie_rank());
    let mut best = order[0];
    for cand in &order[1..] {
        if cand.1 > best.1 + tol {
            best = cand;
        }
    }
    best.0
}

pub fn dt_select(
    ctx: &LookaheadContext,
    state: &LearningState,
    scene: &Scene,
    weights: &[f64; NUM_FEATURES],
) -> Result<ActionKind> {
    let scored = score_candidates(ctx, state, scene, weights)?;
    Ok(argmax_action(&scored, weights))
}

/// Boltzmann distribution over candidates, p(a) ∝ exp(β·EU(a)).
pub fn softmax_policy(scored: &[(ActionKind, f64)], beta: f64) -> Result<Vec<(ActionKind, f64)>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {beta}")));
    }
    let max = scored.iter().map(|(_, u)| *u).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scored.iter().map(|(_, u)| (beta * (u - max)).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(scored.iter().zip(exps).map(|((a, _), e)| (*a, e / z)).collect())
}

/// Feature-subset answer the learner expects: the `q` features with highest
/// mutual information with the concept labels in its current sample.
pub fn proxy_feature_subset(sample: &[crate::domain::LabeledExample], dim: usize, q: usize) -> Vec<usize> {
    let q = q.clamp(1, dim.max(1));
    let mut scored: Vec<(usize, f64)> = (0..dim)
        .map(|j| {
            let values: Vec<f64> = sample.iter().map(|e| e.features[j]).collect();
            let labels: Vec<usize> = sample.iter().map(|e| e.concept).collect();
            (j, discretized_mutual_information(&values, &labels))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = scored.into_iter().take(q).map(|(j, _)| j).collect();
    out.sort_unstable();
    out
}

/// Mutual information (nats) between equal-frequency bins of `values` and `labels`.
fn discretized_mutual_information(values: &[f64], labels: &[usize]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let bins = match n {
        0..=7 => 2,
        8..=15 => 3,
        _ => 4,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut bin_of = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        bin_of[i] = rank * bins / n;
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![vec![0usize; n_labels]; bins];
    for i in 0..n {
        joint[bin_of[i]][labels[i]] += 1;
    }
    let bin_tot: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let lab_tot: Vec<usize> = (0..n_labels).map(|l| joint.iter().map(|r| r[l]).sum()).collect();
    let nf = n as f64;
    let mut mi = 0.0;
    for b in 0..bins {
        for l in 0..n_labels {
            let c = joint[b][l];
            if c > 0 {
                let pxy = c as f64 / nf;
                mi += pxy * (pxy * nf * nf / (bin_tot[b] as f64 * lab_tot[l] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}
