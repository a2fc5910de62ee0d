//! Session-oriented HTTP service over live episodes.
//!
//! A human drives a session either as demonstrator (choosing the learner's
//! action each turn) or as teacher (answering the learner's queries). Every
//! mutation echoes the session's turn token, so of two concurrent steps on
//! one session exactly one succeeds. Sessions are appended to disk on every
//! turn and replayed on startup.

mod error;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, Request, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use envaware_core::api::{
    CandidateList, CreateSession, DemonstrateStep, Health, ObserveStep, SessionView, StepResult, TaskInfo, TaskList,
    TeachStep, API_VERSION,
};
use envaware_core::envsim::{load_task, TaskDataset};

pub use error::{ServiceError, ServiceResult};
pub use session::Session;

/// Loads every subdirectory of `dir` that holds a task file set, keyed by
/// directory name.
pub fn load_tasks_dir(dir: &Path) -> ServiceResult<BTreeMap<String, Arc<TaskDataset>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Store(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| ServiceError::Store(e.to_string()))?.path();
        if path.join("concepts.json").is_file() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.insert(name, Arc::new(load_task(&path)?));
        }
    }
    Ok(out)
}

type Shared = Arc<Mutex<Session>>;

struct Inner {
    tasks: BTreeMap<String, Arc<TaskDataset>>,
    store: PathBuf,
    sessions: RwLock<HashMap<String, Shared>>,
    /// Serializes session creation: id allocation and idempotency keys.
    create: Mutex<Registry>,
}

struct Registry {
    next_id: u64,
    keys: HashMap<String, String>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the session store at `store`, replaying every session found.
    pub fn open(tasks: BTreeMap<String, Arc<TaskDataset>>, store: impl Into<PathBuf>) -> ServiceResult<Self> {
        let store = store.into();
        std::fs::create_dir_all(&store).map_err(|e| ServiceError::Store(format!("{}: {e}", store.display())))?;
        let mut logs: Vec<PathBuf> = std::fs::read_dir(&store)
            .map_err(|e| ServiceError::Store(format!("{}: {e}", store.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();
        let mut sessions = HashMap::new();
        let mut registry = Registry {
            next_id: 1,
            keys: HashMap::new(),
        };
        for path in logs {
            let s = Session::restore(&path, |name| tasks.get(name).cloned())?;
            if let Some(n) = s.id().strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                registry.next_id = registry.next_id.max(n + 1);
            }
            if let Some(k) = s.idempotency_key() {
                registry.keys.insert(k.to_string(), s.id().to_string());
            }
            sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                tasks,
                store,
                sessions: RwLock::new(sessions),
                create: Mutex::new(registry),
            }),
        })
    }

    fn session(&self, id: &str) -> ServiceResult<Shared> {
        let map = self.inner.sessions.read().map_err(|_| poisoned())?;
        map.get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, request: CreateSession) -> ServiceResult<SessionView> {
        let mut reg = self.inner.create.lock().map_err(|_| poisoned())?;
        if let Some(id) = request.idempotency_key.as_ref().and_then(|k| reg.keys.get(k)) {
            let s = self.session(id)?;
            let mut s = s.lock().map_err(|_| poisoned())?;
            return s.view();
        }
        let dataset = self
            .inner
            .tasks
            .get(&request.task)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownTask(request.task.clone()))?;
        let id = format!("s{:06}", reg.next_id);
        let key = request.idempotency_key.clone();
        let mut s = Session::create(id.clone(), request, dataset, &self.inner.store)?;
        reg.next_id += 1;
        if let Some(k) = key {
            reg.keys.insert(k, id.clone());
        }
        let view = s.view()?;
        self.inner
            .sessions
            .write()
            .map_err(|_| poisoned())?
            .insert(id, Arc::new(Mutex::new(s)));
        Ok(view)
    }

    /// Runs `f` with exclusive access to one session.
    pub fn with_session<R>(&self, id: &str, f: impl FnOnce(&mut Session) -> ServiceResult<R>) -> ServiceResult<R> {
        let s = self.session(id)?;
        let mut guard = s.lock().map_err(|_| poisoned())?;
        f(&mut guard)
    }

    pub fn task_list(&self) -> TaskList {
        TaskList {
            v: API_VERSION,
            tasks: self
                .inner
                .tasks
                .iter()
                .map(|(name, ds)| TaskInfo {
                    name: name.clone(),
                    concepts: ds.concepts.iter().map(|c| c.id.clone()).collect(),
                    feature_dim: ds.feature_dim,
                    phases: ds.phases,
                })
                .collect(),
        }
    }
}

fn poisoned() -> ServiceError {
    ServiceError::Store("session lock poisoned".into())
}

/// JSON body extractor whose rejections use the service's error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(ServiceError::Invalid(rejection_text(e))),
        }
    }
}

fn rejection_text(e: JsonRejection) -> String {
    e.body_text()
}

/// Engine work is CPU-bound; keep it off the async workers.
async fn blocking<R: Send + 'static>(f: impl FnOnce() -> ServiceResult<R> + Send + 'static) -> ServiceResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Store(format!("worker failed: {e}")))?
}

async fn health() -> Json<Health> {
    Json(Health {
        v: API_VERSION,
        status: "ok".into(),
    })
}

async fn tasks(State(app): State<AppState>) -> Json<TaskList> {
    Json(app.task_list())
}

async fn create(State(app): State<AppState>, ApiJson(req): ApiJson<CreateSession>) -> ServiceResult<Json<SessionView>> {
    Ok(Json(blocking(move || app.create_session(req)).await?))
}

async fn read(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<SessionView>> {
    Ok(Json(blocking(move || app.with_session(&id, |s| s.view())).await?))
}

async fn candidates(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<CandidateList>> {
    Ok(Json(blocking(move || app.with_session(&id, |s| s.candidates())).await?))
}

async fn demonstrate(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<DemonstrateStep>,
) -> ServiceResult<Json<StepResult>> {
    Ok(Json(blocking(move || app.with_session(&id, |s| s.demonstrate(&req))).await?))
}

async fn teach(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<TeachStep>,
) -> ServiceResult<Json<StepResult>> {
    Ok(Json(blocking(move || app.with_session(&id, |s| s.teach(&req))).await?))
}

async fn observe(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<ObserveStep>,
) -> ServiceResult<Json<StepResult>> {
    Ok(Json(blocking(move || app.with_session(&id, |s| s.observe(&req))).await?))
}

async fn export(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<impl IntoResponse> {
    let body = blocking(move || app.with_session(&id, |s| s.export())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/tasks", get(tasks))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(read))
        .route("/v1/sessions/{id}/candidates", get(candidates))
        .route("/v1/sessions/{id}/demonstrate", post(demonstrate))
        .route("/v1/sessions/{id}/teach", post(teach))
        .route("/v1/sessions/{id}/observe", post(observe))
        .route("/v1/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "session service listening");
    }
    axum::serve(listener, router(state)).await
}
