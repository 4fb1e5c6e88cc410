//! Local HTTP API and static UI. Builds and runs share one lock; a second
//! mutation while one is in flight gets 409.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mvee_core::results::ReportError;
use mvee_core::Outcome;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::anomaly::{anomaly_view, AnomalyLookupError};
use crate::project::{BuildError, Project, ReportFailure, RunError, StateError};

#[derive(Clone)]
struct AppState {
    project: Arc<Project>,
    busy: Arc<Mutex<()>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl ToString) -> Self {
        Self { status, code, detail: detail.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "detail": self.detail}))).into_response()
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::NotInitialized(_) => ApiError::new(StatusCode::CONFLICT, "not_initialized", e),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "state", e),
        }
    }
}

impl From<ReportFailure> for ApiError {
    fn from(e: ReportFailure) -> Self {
        match e {
            ReportFailure::State(s) => s.into(),
            ReportFailure::Report(r @ ReportError::EmptySelection { .. }) => {
                ApiError::new(StatusCode::NOT_FOUND, "empty_selection", r)
            }
            ReportFailure::Report(r) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report", r),
        }
    }
}

impl From<BuildError> for ApiError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::State(s) => s.into(),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "build_failed", other),
        }
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::State(s) => s.into(),
            RunError::NoBuild => ApiError::new(StatusCode::CONFLICT, "no_build", e),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "run_failed", other),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))
}

async fn graph(State(s): State<AppState>) -> ApiResult<Response> {
    let graph = blocking(move || s.project.load_graph()).await??;
    Ok(json_text(graph.to_json()))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BuildEntry {
    build_id: String,
    outcomes: BTreeMap<String, Outcome>,
    anomalies: Vec<String>,
}

async fn builds(State(s): State<AppState>) -> ApiResult<Json<Vec<BuildEntry>>> {
    let graph = blocking(move || s.project.load_graph()).await??;
    let entries = graph
        .build_ids()
        .into_iter()
        .map(|id| {
            let outcomes = graph.build_outcomes(&id);
            let anomalies = outcomes.iter().filter(|(_, o)| o.is_fork()).map(|(m, _)| m.clone()).collect();
            BuildEntry { build_id: id, outcomes, anomalies }
        })
        .collect();
    Ok(Json(entries))
}

async fn anomaly(State(s): State<AppState>, Path((build, section)): Path<(String, String)>) -> ApiResult<Response> {
    let project = s.project.clone();
    let graph = blocking(move || project.load_graph()).await??;
    match anomaly_view(&graph, &s.project.state, &build, &section) {
        Ok(view) => Ok(Json(view).into_response()),
        Err(e @ AnomalyLookupError::NotAnomalous { .. }) => Err(ApiError::new(StatusCode::NOT_FOUND, "no_anomaly", e)),
        Err(e) => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", e)),
    }
}

fn selection(q: &HashMap<String, String>) -> ApiResult<(String, String)> {
    match (q.get("metric"), q.get("param")) {
        (Some(m), Some(p)) if !m.is_empty() && !p.is_empty() => Ok((m.clone(), p.clone())),
        _ => Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "query needs `metric` and `param`")),
    }
}

/// All stored records, or the relevant series for `metric` over `param`.
async fn results(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    if q.is_empty() {
        let store = blocking(move || s.project.load_store()).await??;
        return Ok(Json(json!({ "records": store.records() })).into_response());
    }
    let (metric, param) = selection(&q)?;
    let report = blocking(move || s.project.report_data(&metric, &param)).await??;
    Ok(json_text(report.to_json()))
}

async fn report(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let (metric, param) = selection(&q)?;
    let report = blocking(move || s.project.report_data(&metric, &param)).await??;
    let mut doc: Value = serde_json::from_str(&report.to_json()).expect("report json");
    doc["svg"] = Value::String(report.svg);
    Ok(Json(doc))
}

fn busy() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "busy", "a build or run is already in progress")
}

async fn build(State(s): State<AppState>) -> ApiResult<Response> {
    let _guard = s.busy.try_lock_owned().map_err(|_| busy())?;
    let project = s.project.clone();
    let report = blocking(move || project.build()).await??;
    Ok(Json(report).into_response())
}

async fn run(State(s): State<AppState>) -> ApiResult<Response> {
    let _guard = s.busy.try_lock_owned().map_err(|_| busy())?;
    let project = s.project.clone();
    let report = blocking(move || project.run()).await??;
    Ok(Json(report).into_response())
}

const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>MVEE</title></head>
<body>
<h1>MVEE</h1>
<p>The web UI bundle is not installed. Start the server with <code>--ui &lt;dir&gt;</code> to serve it.</p>
<ul>
<li><a href=\"/api/graph\">/api/graph</a></li>
<li><a href=\"/api/builds\">/api/builds</a></li>
<li><a href=\"/api/results\">/api/results</a></li>
</ul>
</body></html>
";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// The API under `/api`, the UI bundle (or a placeholder page) everywhere else.
pub fn router(project: Project, ui: Option<PathBuf>) -> Router {
    let state = AppState { project: Arc::new(project), busy: Arc::new(Mutex::new(())) };
    let api = Router::new()
        .route("/graph", get(graph))
        .route("/builds", get(builds))
        .route("/anomaly/{build}/{section}", get(anomaly))
        .route("/results", get(results))
        .route("/report", get(report))
        .route("/build", post(build))
        .route("/run", post(run))
        .fallback(api_not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match ui.filter(|d| d.join("index.html").is_file()) {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(placeholder)),
    }
}

pub async fn serve(project: Project, port: u16, ui: Option<PathBuf>) -> std::io::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(project, ui)).await
}
