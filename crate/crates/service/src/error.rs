use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::Value;

use crate::api::SCHEMA_VERSION;

/// Errors returned to clients as `{code, message, detail}`.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("patient {0} not found")]
    UnknownPatient(u64),

    #[error("no route for {0}")]
    UnknownRoute(String),

    #[error("{message}")]
    Unprocessable { message: String, detail: Value },

    #[error("{message}")]
    BadRequest { status: StatusCode, message: String },

    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    schema_version: u32,
    code: &'a str,
    message: String,
    detail: Value,
}

impl ApiError {
    pub fn unprocessable(message: impl Into<String>, detail: Value) -> Self {
        ApiError::Unprocessable {
            message: message.into(),
            detail,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownPatient(_) | ApiError::UnknownRoute(_) => StatusCode::NOT_FOUND,
            ApiError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadRequest { status, .. } => *status,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownPatient(_) => "unknown_patient",
            ApiError::UnknownRoute(_) => "unknown_route",
            ApiError::Unprocessable { .. } => "invalid_request",
            ApiError::BadRequest { .. } => "malformed_request",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let detail = match &self {
            ApiError::UnknownPatient(id) => serde_json::json!({ "patient_id": id }),
            ApiError::UnknownRoute(path) => serde_json::json!({ "path": path }),
            ApiError::Unprocessable { detail, .. } => detail.clone(),
            ApiError::BadRequest { .. } | ApiError::Internal(_) => Value::Null,
        };
        if matches!(self, ApiError::Internal(_)) {
            log::error!("{self}");
        }
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            code: self.code(),
            message: self.to_string(),
            detail,
        };
        (self.status(), Json(body)).into_response()
    }
}
