use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use convlens_core::artifacts::PlanError;
use convlens_core::composition::{CompositionError, SummaryError};
use convlens_core::ingest::IngestError;
use convlens_core::state::ResolveError;

/// Every error the API reports. The JSON body carries the variant name as
/// `error` and the display text as `message`.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    MalformedExport(String),
    #[error(transparent)]
    MissingDataset(PlanError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {id} is not ready (status {status})")]
    NotReady { id: String, status: String },
    #[error("turn {0} does not exist")]
    UnknownTurn(usize),
    #[error("unknown artifact {0}")]
    UnknownArtifact(String),
    #[error("unknown composition {0}")]
    UnknownComposition(String),
    #[error(transparent)]
    Composition(CompositionError),
    #[error(transparent)]
    Summary(SummaryError),
    #[error("no language model is configured; summaries need the live or replay backend")]
    NoBackend,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::MalformedExport(_) => "MalformedExport",
            ApiError::MissingDataset(_) => "MissingDataset",
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::UnknownSession(_) => "UnknownSession",
            ApiError::NotReady { .. } => "NotReady",
            ApiError::UnknownTurn(_) => "UnknownTurn",
            ApiError::UnknownArtifact(_) => "UnknownArtifact",
            ApiError::UnknownComposition(_) => "UnknownComposition",
            ApiError::Composition(e) => match e {
                CompositionError::Resolve(ResolveError::UnknownRef(_)) => "UnknownRef",
                CompositionError::Resolve(ResolveError::KindMismatch(_)) => "KindMismatch",
                CompositionError::InvalidPosition(_) => "InvalidPosition",
                CompositionError::CycleMove(_) => "CycleMove",
                CompositionError::UnknownBlock(_) => "UnknownBlock",
            },
            ApiError::Summary(e) => match e {
                SummaryError::InvalidParams { .. } => "InvalidParams",
                SummaryError::EmptyContent => "EmptyContent",
                SummaryError::BackendFailure(_) => "BackendFailure",
            },
            ApiError::NoBackend => "NoBackend",
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::MalformedExport(_) | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::UnknownSession(_)
            | ApiError::UnknownTurn(_)
            | ApiError::UnknownArtifact(_)
            | ApiError::UnknownComposition(_) => StatusCode::NOT_FOUND,
            ApiError::NotReady { .. } => StatusCode::CONFLICT,
            ApiError::MissingDataset(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Composition(CompositionError::UnknownBlock(_)) => StatusCode::NOT_FOUND,
            ApiError::Composition(CompositionError::CycleMove(_)) => StatusCode::CONFLICT,
            ApiError::Composition(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Summary(SummaryError::BackendFailure(_)) => StatusCode::BAD_GATEWAY,
            ApiError::Summary(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NoBackend => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        ApiError::MalformedExport(e.to_string())
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        ApiError::MissingDataset(e)
    }
}

impl From<CompositionError> for ApiError {
    fn from(e: CompositionError) -> Self {
        ApiError::Composition(e)
    }
}

impl From<SummaryError> for ApiError {
    fn from(e: SummaryError) -> Self {
        ApiError::Summary(e)
    }
}

impl From<ResolveError> for ApiError {
    fn from(e: ResolveError) -> Self {
        ApiError::Composition(CompositionError::Resolve(e))
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code(), "message": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}
