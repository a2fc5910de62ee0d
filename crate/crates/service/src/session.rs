//! One live episode and its append-only turn log.
//!
//! The log's first line records the create request; every committed turn
//! appends its action and the answer absorbed. Replaying the turns through
//! a fresh stepper reproduces the session exactly, since the engine is
//! deterministic given the config and the answers.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use envaware_core::api::{
    CandidateList, CandidateView, CreateSession, DemonstrateStep, HumanAnswer, ObserveStep, PendingQuery,
    SceneInstanceView, SceneView, SessionMode, SessionStatus, SessionView, StepResult, TeachStep, API_VERSION,
};
use envaware_core::domain::{normalize_subset, OracleAnswer};
use envaware_core::envsim::{Oracle, SimulatedTeacher, TaskDataset};
use envaware_core::episode::Stepper;
use envaware_core::strategies::FeatureSet;
use envaware_core::trajectory::to_jsonl;
use envaware_core::{ActionKind, Strategy, WeightVector, NUM_FEATURES};

use crate::error::{ServiceError, ServiceResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
enum Record {
    Create { v: u32, id: String, request: CreateSession },
    Turn { v: u32, turn: u32, action: ActionKind, answer: OracleAnswer },
}

pub fn check_version(v: u32) -> ServiceResult<()> {
    if v != API_VERSION {
        return Err(ServiceError::Version(v));
    }
    Ok(())
}

pub struct Session {
    id: String,
    request: CreateSession,
    strategy: Strategy,
    preview: [f64; NUM_FEATURES],
    stepper: Stepper,
    teacher: SimulatedTeacher,
    pending: Option<ActionKind>,
    log: PathBuf,
}

fn strategy_for(request: &CreateSession) -> ServiceResult<Strategy> {
    let id = request.config.strategy;
    match (&request.weights, id.feature_set()) {
        (None, _) => Ok(Strategy::baseline(id)),
        (Some(w), Some(set)) => Ok(Strategy::with_weights(id, WeightVector::new(set, w.clone())?)?),
        (Some(_), None) => Err(ServiceError::Invalid(format!("strategy {id} takes no weights"))),
    }
}

impl Session {
    fn build(id: String, request: CreateSession, dataset: Arc<TaskDataset>, log: PathBuf) -> ServiceResult<Self> {
        check_version(request.v)?;
        request.config.validate()?;
        let strategy = strategy_for(&request)?;
        let preview = strategy
            .weights
            .as_ref()
            .map(|w| w.full())
            .unwrap_or_else(|| WeightVector::uniform(FeatureSet::TaskEnv).full());
        let stepper = Stepper::new(dataset.clone(), request.config.clone())?;
        let teacher = SimulatedTeacher::new(dataset, request.config.seed);
        Ok(Session {
            id,
            request,
            strategy,
            preview,
            stepper,
            teacher,
            pending: None,
            log,
        })
    }

    /// Starts a session and writes its log header to `dir/<id>.jsonl`.
    pub fn create(id: String, request: CreateSession, dataset: Arc<TaskDataset>, dir: &Path) -> ServiceResult<Self> {
        let path = dir.join(format!("{id}.jsonl"));
        let mut s = Session::build(id.clone(), request.clone(), dataset, path.clone())?;
        let header = Record::Create {
            v: API_VERSION,
            id,
            request,
        };
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| ServiceError::Store(format!("{}: {e}", path.display())))?;
        write_line(&mut f, &path, &header)?;
        s.advance_teach()?;
        Ok(s)
    }

    /// Rebuilds a session from its log. `dataset` resolves a task name.
    pub fn restore(path: &Path, dataset: impl Fn(&str) -> Option<Arc<TaskDataset>>) -> ServiceResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Store(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |n: usize, e: String| ServiceError::Store(format!("{}: line {n}: {e}", path.display()));
        let first = lines.next().ok_or_else(|| bad(1, "empty session log".into()))?;
        let Record::Create { id, request, .. } = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))? else {
            return Err(bad(1, "first record is not a create record".into()));
        };
        let ds = dataset(&request.task).ok_or_else(|| ServiceError::UnknownTask(request.task.clone()))?;
        let mut s = Session::build(id, request, ds, path.to_path_buf())?;
        for (i, line) in lines.enumerate() {
            match serde_json::from_str(line).map_err(|e| bad(i + 2, e.to_string()))? {
                Record::Turn { action, answer, .. } => {
                    s.stepper.commit(&action, &answer)?;
                }
                Record::Create { .. } => return Err(bad(i + 2, "duplicate create record".into())),
            }
        }
        s.advance_teach()?;
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn idempotency_key(&self) -> Option<&str> {
        self.request.idempotency_key.as_deref()
    }

    pub fn mode(&self) -> SessionMode {
        self.request.mode
    }

    pub fn token(&self) -> u64 {
        self.stepper.steps().len() as u64
    }

    pub fn is_finished(&self) -> bool {
        self.stepper.is_finished()
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    fn record(&mut self, action: ActionKind, answer: &OracleAnswer) -> ServiceResult<()> {
        let turn = self.stepper.turn();
        self.stepper.commit(&action, answer)?;
        let rec = Record::Turn {
            v: API_VERSION,
            turn,
            action,
            answer: answer.clone(),
        };
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.log)
            .map_err(|e| ServiceError::Store(format!("{}: {e}", self.log.display())))?;
        write_line(&mut f, &self.log, &rec)
    }

    /// In teach mode, plays the strategy's no-query turns until it asks
    /// something or the episode ends.
    fn advance_teach(&mut self) -> ServiceResult<()> {
        if self.request.mode != SessionMode::Teach {
            return Ok(());
        }
        self.pending = None;
        while !self.stepper.is_finished() {
            let action = self.stepper.select(&self.strategy)?;
            if action.is_query() {
                self.pending = Some(action);
                break;
            }
            self.record(action, &OracleAnswer::NoAnswer)?;
        }
        Ok(())
    }

    fn check_token(&self, got: u64) -> ServiceResult<()> {
        let expected = self.token();
        if got != expected {
            return Err(ServiceError::StaleToken { expected, got });
        }
        Ok(())
    }

    fn require_mode(&self, mode: SessionMode) -> ServiceResult<()> {
        if self.request.mode != mode {
            return Err(ServiceError::WrongMode(format!(
                "session {} is in {:?} mode",
                self.id, self.request.mode
            )));
        }
        Ok(())
    }

    fn preflight(&self, v: u32, mode: SessionMode, token: u64) -> ServiceResult<()> {
        check_version(v)?;
        self.require_mode(mode)?;
        self.check_token(token)?;
        if self.stepper.is_finished() {
            return Err(envaware_core::Error::EpisodeFinished(self.stepper.state().turn()).into());
        }
        Ok(())
    }

    fn candidate_views(&mut self) -> ServiceResult<Vec<CandidateView>> {
        if self.stepper.is_finished() {
            return Ok(Vec::new());
        }
        let costs = *self.stepper.state().costs();
        let scored = self.stepper.score(&self.preview)?;
        Ok(scored
            .into_iter()
            .map(|(action, eu)| CandidateView {
                action,
                cost: costs.cost_of(&action),
                expected_utility: eu,
            })
            .collect())
    }

    pub fn candidates(&mut self) -> ServiceResult<CandidateList> {
        Ok(CandidateList {
            v: API_VERSION,
            turn_token: self.token(),
            candidates: self.candidate_views()?,
        })
    }

    pub fn view(&mut self) -> ServiceResult<SessionView> {
        let candidates = if self.request.mode == SessionMode::Demonstrate {
            self.candidate_views()?
        } else {
            Vec::new()
        };
        let pending = self.pending.map(|action| PendingQuery {
            action,
            concept: match action {
                ActionKind::DemoQuery(c) => Some(self.stepper.dataset().concepts[c].id.clone()),
                _ => None,
            },
        });
        let state = self.stepper.state();
        let scene = self.stepper.scene();
        Ok(SessionView {
            v: API_VERSION,
            id: self.id.clone(),
            mode: self.request.mode,
            status: if self.stepper.is_finished() {
                SessionStatus::Finished
            } else {
                SessionStatus::Active
            },
            task: self.request.task.clone(),
            strategy: self.strategy.id,
            turn_token: self.token(),
            turn: self.stepper.turn(),
            time_total: state.time_total(),
            budget_total: state.budget_total(),
            budget_spent: state.budget_spent(),
            phi: self.stepper.phi().to_array(),
            accuracy: self.stepper.accuracy(),
            active_subset: state.active_subset().map(|s| s.to_vec()),
            scene: SceneView {
                index: scene.index,
                phase: scene.phase,
                instances: scene
                    .instances
                    .iter()
                    .map(|i| SceneInstanceView {
                        id: i.id,
                        features: i.features.clone(),
                    })
                    .collect(),
            },
            candidates,
            pending,
            history: self.stepper.steps().to_vec(),
        })
    }

    fn result(&mut self, action: ActionKind, answer: &OracleAnswer) -> ServiceResult<StepResult> {
        Ok(StepResult {
            v: API_VERSION,
            action,
            answer: answer.summary(),
            session: self.view()?,
        })
    }

    pub fn demonstrate(&mut self, req: &DemonstrateStep) -> ServiceResult<StepResult> {
        self.preflight(req.v, SessionMode::Demonstrate, req.turn_token)?;
        let action = req.action;
        if !self.stepper.candidates().iter().any(|c| c.kind == action) {
            // Let the engine explain why: over budget, or not offered.
            self.stepper.commit(&action, &OracleAnswer::NoAnswer)?;
        }
        let answer = if action.is_query() {
            let turn = self.stepper.turn();
            self.teacher.answer(self.stepper.scene(), &action, turn)?
        } else {
            OracleAnswer::NoAnswer
        };
        self.record(action, &answer)?;
        self.result(action, &answer)
    }

    pub fn observe(&mut self, req: &ObserveStep) -> ServiceResult<StepResult> {
        self.preflight(req.v, SessionMode::Observe, req.turn_token)?;
        let action = self.stepper.select(&self.strategy)?;
        let answer = if action.is_query() {
            let turn = self.stepper.turn();
            self.teacher.answer(self.stepper.scene(), &action, turn)?
        } else {
            OracleAnswer::NoAnswer
        };
        self.record(action, &answer)?;
        self.result(action, &answer)
    }

    pub fn teach(&mut self, req: &TeachStep) -> ServiceResult<StepResult> {
        self.preflight(req.v, SessionMode::Teach, req.turn_token)?;
        let action = self
            .pending
            .ok_or_else(|| ServiceError::Invalid("no query is pending".into()))?;
        let answer = self.convert(action, &req.answer)?;
        self.record(action, &answer)?;
        self.advance_teach()?;
        self.result(action, &answer)
    }

    fn convert(&self, action: ActionKind, answer: &HumanAnswer) -> ServiceResult<OracleAnswer> {
        let ds = self.stepper.dataset();
        match (action, answer) {
            (ActionKind::LabelQuery(_), HumanAnswer::Label { concept }) => {
                let concept = ds
                    .concept_index(concept)
                    .ok_or_else(|| ServiceError::Invalid(format!("unknown concept '{concept}'")))?;
                Ok(OracleAnswer::Label { concept })
            }
            (ActionKind::DemoQuery(concept), HumanAnswer::Demo { instance }) => {
                let inst = self
                    .stepper
                    .scene()
                    .get(*instance)
                    .ok_or_else(|| ServiceError::Invalid(format!("instance {instance} is not in the current scene")))?;
                Ok(OracleAnswer::Demo {
                    instance: inst.clone(),
                    concept,
                })
            }
            (ActionKind::FeatureSubsetQuery, HumanAnswer::FeatureSubset { features }) => {
                let features =
                    normalize_subset(features, ds.feature_dim).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                Ok(OracleAnswer::FeatureSubset { features })
            }
            (pending, _) => Err(ServiceError::Invalid(format!(
                "answer kind does not match the pending query {pending}"
            ))),
        }
    }

    /// The finished episode as a demonstration file.
    pub fn export(&self) -> ServiceResult<String> {
        if !self.stepper.is_finished() {
            return Err(ServiceError::Active);
        }
        Ok(to_jsonl(&[self.stepper.trajectory()])?)
    }
}

fn write_line(f: &mut File, path: &Path, rec: &Record) -> ServiceResult<()> {
    let mut line = serde_json::to_string(rec).map_err(|e| ServiceError::Store(e.to_string()))?;
    line.push('\n');
    f.write_all(line.as_bytes())
        .and_then(|_| f.sync_data())
        .map_err(|e| ServiceError::Store(format!("{}: {e}", path.display())))
}
