//! HTTP JSON API over a [`StudyStore`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use hierdial::corpus::{ContextClass, Dialogue};

use crate::error::StudyError;
use crate::session::{Ack, CandidateSource, ItemView, Protocol, Report, Submission};
use crate::store::StudyStore;

/// Shared server state: the store plus what new sessions draw on.
pub struct StudyApp {
    pub store: Mutex<StudyStore>,
    pub models: BTreeMap<String, Arc<dyn CandidateSource>>,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub protocol: Protocol,
    /// Four model names for rating, two for preference.
    pub models: Vec<String>,
    #[serde(default = "default_items")]
    pub items: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub class: Option<ContextClass>,
}

fn default_items() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub protocol: Protocol,
    pub total: usize,
    pub first: ItemView,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudyError::NotFound { .. } => StatusCode::NOT_FOUND,
            StudyError::Conflict { .. } => StatusCode::CONFLICT,
            StudyError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Model(_) | StudyError::Io(_) | StudyError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

type AppState = Arc<StudyApp>;
type ApiResult<T> = Result<Json<T>, StudyError>;

fn lock(app: &StudyApp) -> std::sync::MutexGuard<'_, StudyStore> {
    // A panic while holding the lock cannot leave the store half-updated:
    // the journal is written before any in-memory change.
    app.store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create(State(app): State<AppState>, Json(req): Json<CreateRequest>) -> ApiResult<Created> {
    let sources = req
        .models
        .iter()
        .map(|m| {
            app.models
                .get(m)
                .map(|s| s.as_ref())
                .ok_or_else(|| StudyError::NotFound { what: "model", id: m.clone() })
        })
        .collect::<Result<Vec<&dyn CandidateSource>, _>>()?;
    let mut store = lock(&app);
    let s = store.create(req.protocol, &app.dialogues, &sources, req.items, req.seed, req.class)?;
    Ok(Json(Created { id: s.id.clone(), protocol: s.protocol, total: s.items.len(), first: s.view(0)? }))
}

async fn item(State(app): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<ItemView> {
    Ok(Json(lock(&app).view(&id, k)?))
}

async fn submit(
    State(app): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
    Json(sub): Json<Submission>,
) -> ApiResult<Ack> {
    Ok(Json(lock(&app).submit(&id, k, &sub)?))
}

async fn report(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Report> {
    Ok(Json(lock(&app).report(&id)?))
}

async fn models(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.models.keys().cloned().collect())
}

/// The API router. Static files from `ui_dir` are served for every other
/// path; without one, the bundled single-page UI is served at `/`.
pub fn router(app: Arc<StudyApp>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/items/{k}", get(item).post(submit))
        .route("/sessions/{id}/report", get(report))
        .route("/models", get(models))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(include_str!("../ui/index.html")) })),
    }
}

/// Binds `addr` and serves until the process ends. Returns the bound
/// address through `ready` once listening (useful with port 0).
pub async fn serve(
    app: Arc<StudyApp>,
    ui_dir: Option<PathBuf>,
    addr: &str,
    ready: impl FnOnce(std::net::SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    ready(listener.local_addr()?);
    axum::serve(listener, router(app, ui_dir)).await
}
