use audit_core::query::QueryError;
use audit_core::report::ReportError;
use audit_core::runner::RunError;
use audit_core::store::StoreError;
use audit_core::window::WindowError;
use audit_core::workspace::WorkspaceError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    InvalidRequest,
    Conflict,
    Internal,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::InvalidRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_path: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            field_path: None,
        }
    }

    pub fn at(mut self, field_path: impl Into<String>) -> Self {
        self.field_path = Some(field_path.into());
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let field = e.field().to_string();
        ApiError::invalid(e.to_string()).at(field)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownAcquisition(_) | StoreError::StateNotFound { .. } => {
                ApiError::not_found(e.to_string())
            }
            StoreError::InvertedRange { .. } => ApiError::invalid(e.to_string()).at("from"),
        }
    }
}

impl From<WindowError> for ApiError {
    fn from(e: WindowError) -> Self {
        match e {
            WindowError::Store(inner) => inner.into(),
            WindowError::AnchorNotFound { .. } => ApiError::invalid(e.to_string()).at("anchors"),
            WindowError::NegativeExtent { field, .. } => ApiError::invalid(e.to_string()).at(field),
            WindowError::InvalidName(_) => ApiError::invalid(e.to_string()).at("name"),
            WindowError::DanglingWindow(_) | WindowError::IntegrityMismatch(_) => {
                ApiError::conflict(e.to_string())
            }
        }
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::CollectionNotFound(_) | WorkspaceError::RunNotFound(_) => {
                ApiError::not_found(e.to_string())
            }
            WorkspaceError::CollectionExists(_) | WorkspaceError::RunExists(_) => {
                ApiError::conflict(e.to_string())
            }
            WorkspaceError::EmptyCollection(_) => {
                ApiError::invalid(e.to_string()).at("collection_id")
            }
            WorkspaceError::InvalidId(_) => ApiError::invalid(e.to_string()),
            WorkspaceError::Template(_) => ApiError::invalid(e.to_string()).at("prompt"),
            WorkspaceError::Window(inner) => inner.into(),
            WorkspaceError::Run(RunError::Sink(_)) => {
                ApiError::new(ErrorCode::Internal, e.to_string())
            }
            WorkspaceError::Run(_) => ApiError::invalid(e.to_string()).at("models"),
            WorkspaceError::Report(ReportError::Analysis(_) | ReportError::Ambiguity(_)) => {
                ApiError::conflict(e.to_string())
            }
            other => ApiError::new(ErrorCode::Internal, other.to_string()),
        }
    }
}
