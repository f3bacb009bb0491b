use std::net::SocketAddr;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use curator_core::error::ErrorClass;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Runtime(std::io::Error),
    #[error(transparent)]
    Core(#[from] curator_core::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Bind { .. } => "PortInUse",
            ServiceError::Runtime(_) => "Io",
            ServiceError::Core(e) => e.code(),
        }
    }
}

/// Error response: the domain error code and message as JSON.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn invalid(code: &str, message: &str) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: code.to_owned(),
            message: message.to_owned(),
        }
    }

    pub(crate) fn internal(e: impl std::fmt::Display) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "Internal".to_owned(),
            message: e.to_string(),
        }
    }
}

impl From<curator_core::Error> for ApiError {
    fn from(e: curator_core::Error) -> Self {
        let status = match e.class() {
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code().to_owned(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message });
        let mut text = curator_core::views::render(&body).unwrap_or_else(|_| body.to_string());
        text.push('\n');
        (self.status, [(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response()
    }
}
