use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use envaware_core::api::{ErrorBody, API_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("unknown session '{0}'")]
    UnknownSession(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{0}")]
    WrongMode(String),

    #[error("stale turn token: expected {expected}, got {got}")]
    StaleToken { expected: u64, got: u64 },

    #[error("session is still active")]
    Active,

    #[error("unsupported protocol version {0}")]
    Version(u32),

    #[error(transparent)]
    Engine(#[from] envaware_core::Error),

    #[error("session store: {0}")]
    Store(String),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use envaware_core::Error as E;
        match self {
            ServiceError::UnknownTask(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) | ServiceError::Version(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::WrongMode(_) | ServiceError::StaleToken { .. } | ServiceError::Active => StatusCode::CONFLICT,
            ServiceError::Engine(e) => match e {
                E::EpisodeFinished(_) => StatusCode::CONFLICT,
                E::Config(_) | E::Contract(_) | E::Input(_) | E::BudgetExceeded { .. } | E::Oracle(_) => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        use envaware_core::Error as E;
        match self {
            ServiceError::UnknownTask(_) => "unknown_task",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::Version(_) => "unsupported_version",
            ServiceError::WrongMode(_) => "wrong_mode",
            ServiceError::StaleToken { .. } => "stale_token",
            ServiceError::Active => "session_active",
            ServiceError::Engine(e) => match e {
                E::EpisodeFinished(_) => "session_finished",
                E::BudgetExceeded { .. } => "budget_exceeded",
                E::Config(_) => "invalid_config",
                E::Contract(_) => "illegal_action",
                E::Input(_) => "invalid_request",
                E::Oracle(_) => "oracle_unavailable",
                _ => "engine_error",
            },
            ServiceError::Store(_) => "store_error",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            v: API_VERSION,
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
