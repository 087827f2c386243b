//! JSON over HTTP in front of [`TutorService`]. These endpoints are the whole
//! contract the chat client relies on.
//!
//! | method | path                          | body             | reply               |
//! |--------|-------------------------------|------------------|---------------------|
//! | GET    | `/health`                     |                  | `{"status":"ok"}`   |
//! | POST   | `/sessions`                   | `CreateSession`  | `SessionDescriptor` |
//! | GET    | `/sessions/{id}`              |                  | `SessionDescriptor` |
//! | GET    | `/sessions/{id}/next`         |                  | `Delivery`          |
//! | POST   | `/sessions/{id}/events`       | `EventEnvelope`  | `EventAck`          |
//! | GET    | `/sessions/{id}/dsl`          |                  | `DslDocument`       |
//! | GET    | `/students/{id}/model`        |                  | `StudentModel`      |

use std::sync::Arc;

use apprentice_core::ingestion::IngestError;
use apprentice_core::orchestrator::{EventEnvelope, SessionError};
use apprentice_core::pipeline::PipelineError;
use apprentice_core::service::{CreateSession, ServiceError, TutorService};
use apprentice_core::store::StoreError;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<TutorService>,
    /// Static bearer token; `None` leaves the API open.
    pub token: Option<String>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

fn pipeline_stage(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Ingest(_) => "ingestion",
        PipelineError::Segmentation(_) => "segmentation",
        PipelineError::Knowledge(_) => "knowledge",
        PipelineError::Dsl(_) => "dsl",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, extra) = match &self.0 {
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, json!({})),
            ServiceError::SessionExists(_) => (StatusCode::CONFLICT, json!({})),
            ServiceError::Session(SessionError::WrongPhase { event, phase }) => {
                (StatusCode::CONFLICT, json!({"event": event, "phase": phase}))
            }
            ServiceError::Session(SessionError::Gateway(_)) => (StatusCode::BAD_GATEWAY, json!({})),
            ServiceError::Session(_) => (StatusCode::UNPROCESSABLE_ENTITY, json!({})),
            ServiceError::Pipeline(PipelineError::Ingest(IngestError::Config(problems))) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"stage": "ingestion", "problems": problems}),
            ),
            ServiceError::Pipeline(e) => (StatusCode::UNPROCESSABLE_ENTITY, json!({"stage": pipeline_stage(e)})),
            ServiceError::Store(StoreError::InvalidId(_)) => (StatusCode::BAD_REQUEST, json!({})),
            ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, json!({})),
        };
        let mut body = json!({"error": message});
        if let (Some(body), Some(extra)) = (body.as_object_mut(), extra.as_object()) {
            body.extend(extra.clone());
        }
        (status, Json(body)).into_response()
    }
}

/// Service calls block on disk and on the model backend, so they run off
/// the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&TutorService) -> Result<T, ServiceError> + Send + 'static,
{
    let service = state.service.clone();
    let out = tokio::task::spawn_blocking(move || f(&service))
        .await
        .expect("service task panicked")?;
    Ok(Json(out))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn create(State(state): State<AppState>, Json(request): Json<CreateSession>) -> Result<Response, ApiError> {
    let created = blocking(&state, move |s| s.create_session(request)).await?;
    Ok((StatusCode::CREATED, created).into_response())
}

async fn describe(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(&state, move |s| s.describe(&id)).await
}

async fn next(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(&state, move |s| s.next_message(&id)).await
}

async fn event(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(envelope): Json<EventEnvelope>,
) -> Result<impl IntoResponse, ApiError> {
    blocking(&state, move |s| s.post_event(&id, envelope)).await
}

async fn dsl(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(&state, move |s| s.get_dsl(&id)).await
}

async fn student_model(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(&state, move |s| s.get_student_model(&id)).await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({"error": "missing or wrong bearer token"})),
            )
                .into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/events", post(event))
        .route("/sessions/{id}/dsl", get(dsl))
        .route("/students/{id}/model", get(student_model))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/health", get(health)).merge(api).with_state(state)
}
