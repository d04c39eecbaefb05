//! Session service: the JSON-over-HTTP API behind the interactive editor.
//!
//! Each session owns one dataset and one causal model. Requests for the
//! same session are serialized by a per-session lock and executed on the
//! blocking pool; distinct sessions proceed concurrently.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use causal_debias::graph::{EditOp, LogsView, ScriptEntry};
use serde::Deserialize;
use tokio::sync::Mutex;

pub use error::ApiError;
pub use session::{
    ComparisonResponse, ConfigPatch, EvaluateResponse, GraphResponse, PathsResponse, Session, SessionInfo,
    SessionStage, SimulateResponse,
};

/// Upload bodies carry the CSV inline.
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Write a JSON snapshot of a session after every mutating call.
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
    options: ServiceOptions,
}

impl AppState {
    pub fn new(options: ServiceOptions) -> Self {
        AppState {
            sessions: Arc::default(),
            options,
        }
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
    }

    /// Run `f` on the session, serialized with every other call on it.
    async fn run<T, F>(&self, id: &str, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    {
        let session = self.get(id)?;
        let mut guard = session.lock_owned().await;
        let snapshot_dir = self.options.snapshot_dir.clone();
        tokio::task::spawn_blocking(move || {
            let before = guard.revision();
            let out = f(&mut guard)?;
            if let Some(dir) = snapshot_dir {
                if guard.revision() != before {
                    let with_data = matches!(guard.stage(), SessionStage::Loaded);
                    guard.write_snapshot(&dir, with_data)?;
                }
            }
            Ok(out)
        })
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/dataset", post(upload_dataset))
        .route("/sessions/{id}/config", post(set_config))
        .route("/sessions/{id}/discover", post(discover))
        .route("/sessions/{id}/graph", get(get_graph))
        .route("/sessions/{id}/refine", post(refine_op))
        .route("/sessions/{id}/stage", post(toggle_stage))
        .route("/sessions/{id}/debias", post(debias_op))
        .route("/sessions/{id}/paths", get(find_paths))
        .route("/sessions/{id}/logs", get(logs))
        .route("/sessions/{id}/edit-log", get(edit_log))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/evaluate", post(evaluate))
        .route("/sessions/{id}/comparison", get(comparison))
        .route("/sessions/{id}/debiased.csv", get(download_debiased))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, options: ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(options))).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ApiError::Unprocessable(e.body_text())),
        Err(e) => Err(ApiError::BadRequest(e.body_text())),
    }
}

async fn create_session(State(state): State<AppState>) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone());
    let info = session.info();
    if let Some(dir) = &state.options.snapshot_dir {
        session.write_snapshot(dir, false)?;
    }
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    state.run(&id, |s| Ok(s.info())).await.map(Json)
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadBody {
    revision: u64,
    #[serde(default)]
    name: Option<String>,
    csv: String,
    #[serde(default)]
    schema: Option<serde_json::Value>,
}

async fn upload_dataset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<UploadBody>, JsonRejection>,
) -> Result<Json<SessionInfo>, ApiError> {
    let b = body(payload)?;
    state
        .run(&id, move |s| {
            let name = b.name.as_deref().unwrap_or("dataset");
            s.upload(b.revision, name, &b.csv, b.schema.as_ref())
        })
        .await
        .map(Json)
}

async fn set_config(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ConfigPatch>, JsonRejection>,
) -> Result<Json<SessionInfo>, ApiError> {
    let patch = body(payload)?;
    state.run(&id, move |s| s.set_config(patch)).await.map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RevisionBody {
    revision: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionalRevision {
    #[serde(default)]
    revision: Option<u64>,
}

async fn discover(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<RevisionBody>, JsonRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let b = body(payload)?;
    state.run(&id, move |s| s.discover(b.revision)).await.map(Json)
}

async fn get_graph(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<GraphResponse>, ApiError> {
    state.run(&id, |s| s.graph(None)).await.map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    revision: u64,
    op: EditOp,
    source: String,
    target: String,
    #[serde(default)]
    slider: Option<f64>,
}

async fn refine_op(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<EditBody>, JsonRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let b = body(payload)?;
    if b.slider.is_some() {
        return Err(ApiError::Unprocessable("refine edits take no slider".into()));
    }
    state
        .run(&id, move |s| s.refine(b.revision, b.op, &b.source, &b.target))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageBody {
    revision: u64,
    action: String,
}

async fn toggle_stage(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<StageBody>, JsonRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let b = body(payload)?;
    state
        .run(&id, move |s| s.toggle_stage(b.revision, &b.action))
        .await
        .map(Json)
}

async fn debias_op(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<EditBody>, JsonRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let b = body(payload)?;
    state
        .run(&id, move |s| s.debias_op(b.revision, b.op, &b.source, &b.target, b.slider))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct PathQuery {
    source: String,
    target: String,
}

async fn find_paths(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PathQuery>,
) -> Result<Json<PathsResponse>, ApiError> {
    state.run(&id, move |s| s.find_paths(&q.source, &q.target)).await.map(Json)
}

async fn logs(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<LogsView>, ApiError> {
    state.run(&id, |s| s.logs()).await.map(Json)
}

async fn edit_log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<ScriptEntry>>, ApiError> {
    state.run(&id, |s| Ok(s.edit_log())).await.map(Json)
}

/// Simulate and evaluate accept an empty body or `{"revision": n}`.
fn optional_revision(payload: &Bytes) -> Result<Option<u64>, ApiError> {
    if payload.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    let parsed: OptionalRevision =
        serde_json::from_slice(payload).map_err(|e| ApiError::Unprocessable(format!("invalid body: {e}")))?;
    Ok(parsed.revision)
}

async fn simulate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Bytes,
) -> Result<Json<SimulateResponse>, ApiError> {
    let rev = optional_revision(&payload)?;
    state.run(&id, move |s| s.simulate(rev)).await.map(Json)
}

async fn evaluate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Bytes,
) -> Result<Json<EvaluateResponse>, ApiError> {
    let rev = optional_revision(&payload)?;
    state.run(&id, move |s| s.evaluate(rev)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct ComparisonQuery {
    node: Option<String>,
    source: Option<String>,
    target: Option<String>,
}

async fn comparison(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ComparisonQuery>,
) -> Result<Json<ComparisonResponse>, ApiError> {
    state
        .run(&id, move |s| s.comparison(q.node.as_deref(), q.source.as_deref(), q.target.as_deref()))
        .await
        .map(Json)
}

async fn download_debiased(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let csv = state.run(&id, |s| s.debiased_csv()).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}
