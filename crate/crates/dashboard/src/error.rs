use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use labdash_ehr::ClientError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownPatient,
    EhrUnavailable,
    BadRequest,
    Internal,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip)]
    pub status: Option<u16>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            status: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    /// Override the status code implied by `code`.
    pub fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status.as_u16());
        self
    }

    pub fn status(&self) -> StatusCode {
        if let Some(s) = self.status.and_then(|s| StatusCode::from_u16(s).ok()) {
            return s;
        }
        match self.code {
            ErrorCode::UnknownPatient => StatusCode::NOT_FOUND,
            ErrorCode::EhrUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::UnknownPatient(_) => ApiError::new(ErrorCode::UnknownPatient, e.to_string()),
            ClientError::Unavailable(_) => ApiError::new(ErrorCode::EhrUnavailable, e.to_string()),
            ClientError::Protocol(_) => ApiError::internal(e.to_string()).with_status(StatusCode::BAD_GATEWAY),
            ClientError::InvalidEndpoint(_) | ClientError::Cache(_) => ApiError::internal(e.to_string()),
        }
    }
}
