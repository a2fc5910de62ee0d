//! Typed client for the session service.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use envaware_core::api::{
    CandidateList, CreateSession, DemonstrateStep, ErrorBody, Health, HumanAnswer, ObserveStep, SessionView,
    StepResult, TaskList, TeachStep, API_VERSION,
};
use envaware_core::ActionKind;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    /// The service answered with a structured error.
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },

    #[error("unexpected {status} response: {body}")]
    Unexpected { status: StatusCode, body: String },
}

impl ClientError {
    /// The service's error code, if the failure came from the service.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, for example `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, method: Method, path: &str, body: Option<&(impl Serialize + ?Sized)>) -> ClientResult<reqwest::Response> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(body);
        }
        let resp = req.send().await?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(e) => ClientError::Api {
                status,
                code: e.code,
                message: e.message,
            },
            Err(_) => ClientError::Unexpected { status, body: text },
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> ClientResult<T> {
        Ok(self.send(Method::GET, path, None::<&()>).await?.json().await?)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ClientResult<T> {
        Ok(self.send(Method::POST, path, Some(body)).await?.json().await?)
    }

    pub async fn health(&self) -> ClientResult<Health> {
        self.get("/v1/health").await
    }

    pub async fn tasks(&self) -> ClientResult<TaskList> {
        self.get("/v1/tasks").await
    }

    pub async fn create_session(&self, request: &CreateSession) -> ClientResult<SessionView> {
        self.post("/v1/sessions", request).await
    }

    pub async fn session(&self, id: &str) -> ClientResult<SessionView> {
        self.get(&format!("/v1/sessions/{id}")).await
    }

    pub async fn candidates(&self, id: &str) -> ClientResult<CandidateList> {
        self.get(&format!("/v1/sessions/{id}/candidates")).await
    }

    pub async fn demonstrate(&self, id: &str, turn_token: u64, action: ActionKind) -> ClientResult<StepResult> {
        let body = DemonstrateStep {
            v: API_VERSION,
            turn_token,
            action,
        };
        self.post(&format!("/v1/sessions/{id}/demonstrate"), &body).await
    }

    pub async fn teach(&self, id: &str, turn_token: u64, answer: HumanAnswer) -> ClientResult<StepResult> {
        let body = TeachStep {
            v: API_VERSION,
            turn_token,
            answer,
        };
        self.post(&format!("/v1/sessions/{id}/teach"), &body).await
    }

    pub async fn observe(&self, id: &str, turn_token: u64) -> ClientResult<StepResult> {
        let body = ObserveStep {
            v: API_VERSION,
            turn_token,
        };
        self.post(&format!("/v1/sessions/{id}/observe"), &body).await
    }

    /// The finished session's trajectory in demonstration-file form.
    pub async fn export(&self, id: &str) -> ClientResult<String> {
        Ok(self
            .send(Method::GET, &format!("/v1/sessions/{id}/export"), None::<&()>)
            .await?
            .text()
            .await?)
    }
}
