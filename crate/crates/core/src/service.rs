//! HTTP service over a loaded workspace, under `/v1`.
//!
//! Reads never touch disk; the mark basket is the only mutable state and
//! enumeration jobs write new lattice files beside the workspace artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analyze::slice_overlap;
use crate::enumerate::{Algorithm, EnumConfig, SliceRef, DEFAULT_MAX_DEPTH, DEFAULT_MIN_COUNT};
use crate::index::{build_index, NamedKey};
use crate::workspace::{MarkBasket, Workspace, WorkspaceError, MARKS_FILE};

pub const API_VERSION: &str = "1";
pub const DEFAULT_BIND: &str = "127.0.0.1:8640";
pub const BIND_ENV: &str = "SLICEWISE_BIND";
pub const WORKSPACE_ENV: &str = "SLICEWISE_WORKSPACE";
const OPENAPI: &str = include_str!("../assets/openapi.json");
const DEFAULT_LIMIT: usize = 50;
const MAX_LIMIT: usize = 1000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "version": API_VERSION,
            "kind": "error",
            "status": self.status.as_u16(),
            "error": self.message,
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub algorithm: Algorithm,
    pub max_depth: usize,
    pub min_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct AppState {
    workspace: Workspace,
    marks: Mutex<MarkBasket>,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(workspace: Workspace) -> Result<Self, WorkspaceError> {
        let marks = MarkBasket::open(workspace.root.join(MARKS_FILE))?;
        Ok(Self {
            workspace,
            marks: Mutex::new(marks),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/openapi.json", get(openapi))
        .route("/v1/models", get(models))
        .route("/v1/schema", get(schema))
        .route("/v1/models/{model}/report", get(report_page))
        .route("/v1/slices/{key}", get(slice_detail))
        .route("/v1/slices/{key}/samples", get(slice_samples))
        .route("/v1/marks", get(list_marks).post(add_mark))
        .route("/v1/marks/export", get(export_marks))
        .route("/v1/marks/{key}", axum::routing::delete(remove_mark))
        .route("/v1/overlap", get(overlap))
        .route("/v1/jobs/enumerate", post(start_enumeration))
        .route("/v1/jobs/{id}", get(job_status))
        .with_state(state)
}

/// Loads the workspace and serves it until ctrl-c.
pub async fn serve(root: PathBuf, bind: SocketAddr) -> anyhow::Result<()> {
    let workspace = tokio::task::spawn_blocking(move || Workspace::load(root)).await??;
    let state = Arc::new(AppState::new(workspace)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn doc(kind: &str, mut body: Value) -> Json<Value> {
    let mut out = serde_json::Map::new();
    out.insert("version".into(), API_VERSION.into());
    out.insert("kind".into(), kind.into());
    if let Value::Object(fields) = body.take() {
        out.extend(fields);
    }
    Json(Value::Object(out))
}

#[derive(Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

impl PageQuery {
    fn bounds(&self, total: usize) -> Result<(usize, usize, std::ops::Range<usize>), ApiError> {
        let offset = self.offset.unwrap_or(0);
        let limit = self.limit.unwrap_or(DEFAULT_LIMIT);
        if limit == 0 || limit > MAX_LIMIT {
            return Err(ApiError::bad_request(format!(
                "limit must be between 1 and {MAX_LIMIT}"
            )));
        }
        let start = offset.min(total);
        Ok((offset, limit, start..(start + limit).min(total)))
    }
}

fn parse_key(text: &str) -> Result<NamedKey, ApiError> {
    text.parse()
        .map_err(|e: crate::index::KeyParseError| ApiError::bad_request(e.to_string()))
}

fn lookup(state: &AppState, text: &str) -> Result<(NamedKey, SliceRef), ApiError> {
    let key = parse_key(text)?;
    let r = state
        .workspace
        .lattice
        .find_named(&key)
        .ok_or_else(|| ApiError::not_found(format!("no slice {key} in the lattice")))?;
    Ok((key, r))
}

async fn openapi() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

async fn models(State(state): State<Arc<AppState>>) -> ApiResult {
    let models: Vec<Value> = state
        .workspace
        .models
        .iter()
        .map(|m| {
            json!({
                "id": m.id,
                "overall_perf": m.report.overall_perf,
                "threshold": m.report.threshold,
                "rule": m.report.rule,
                "error_slices": m.report.len(),
            })
        })
        .collect();
    Ok(doc(
        "model-list",
        json!({ "lattice_id": state.workspace.lattice.fingerprint(), "models": models }),
    ))
}

async fn schema(State(state): State<Arc<AppState>>) -> ApiResult {
    Ok(doc("schema", json!({ "schema": state.workspace.schema.to_document() })))
}

async fn report_page(
    State(state): State<Arc<AppState>>,
    Path(model): Path<String>,
    Query(page): Query<PageQuery>,
) -> ApiResult {
    let m = state
        .workspace
        .model(&model)
        .ok_or_else(|| ApiError::not_found(format!("unknown model `{model}`")))?;
    let slices = &m.report.error_slices;
    let (offset, limit, range) = page.bounds(slices.len())?;
    Ok(doc(
        "report-page",
        json!({
            "model_id": m.id,
            "threshold": m.report.threshold,
            "overall_perf": m.report.overall_perf,
            "total": slices.len(),
            "offset": offset,
            "limit": limit,
            "items": &slices[range],
        }),
    ))
}

#[derive(Deserialize)]
struct DetailQuery {
    model: Option<String>,
}

async fn slice_detail(
    State(state): State<Arc<AppState>>,
    Path(text): Path<String>,
    Query(q): Query<DetailQuery>,
) -> ApiResult {
    let ws = &state.workspace;
    let (key, r) = lookup(&state, &text)?;
    let views: Vec<_> = match &q.model {
        Some(id) => vec![ws
            .model(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`")))?],
        None => ws.models.iter().collect(),
    };
    let lattice = &ws.lattice;
    let entry = |r: SliceRef| json!({ "key": lattice.named(r), "count": lattice.node(r).count() });
    let parents: Vec<Value> = lattice.parents(r).map(entry).collect();
    let children: Vec<Value> = lattice
        .children(r)
        .into_iter()
        .filter(|&c| views.is_empty() || views.iter().any(|m| m.view.retained(c)))
        .map(entry)
        .collect();
    let models: Vec<Value> = ws
        .models
        .iter()
        .map(|m| {
            json!({
                "model_id": m.id,
                "avg_perf": m.view.avg_perf(r),
                "retained": m.view.retained(r),
                "error_slice": m.report.contains(&key),
            })
        })
        .collect();
    Ok(doc(
        "slice-detail",
        json!({
            "key": key,
            "key_text": key.to_string(),
            "depth": key.depth(),
            "count": lattice.node(r).count(),
            "models": models,
            "parents": parents,
            "children": children,
            "marked": state.marks.lock().expect("mark lock").contains(&key),
        }),
    ))
}

async fn slice_samples(
    State(state): State<Arc<AppState>>,
    Path(text): Path<String>,
    Query(page): Query<PageQuery>,
) -> ApiResult {
    let ws = &state.workspace;
    let (key, r) = lookup(&state, &text)?;
    let members = &ws.lattice.node(r).members;
    let total = members.count();
    let (offset, limit, range) = page.bounds(total)?;
    let samples: Vec<Value> = members
        .iter()
        .skip(range.start)
        .take(range.len())
        .map(|i| {
            let s = &ws.dataset.samples()[i as usize];
            json!({ "id": s.id, "tags": s.tags, "group": s.group })
        })
        .collect();
    Ok(doc(
        "slice-samples",
        json!({ "key": key, "total": total, "offset": offset, "limit": limit, "samples": samples }),
    ))
}

fn marks_doc(basket: &MarkBasket) -> Json<Value> {
    let keys: Vec<String> = basket.keys().iter().map(|k| k.to_string()).collect();
    doc("marks", json!({ "marks": keys }))
}

async fn list_marks(State(state): State<Arc<AppState>>) -> ApiResult {
    Ok(marks_doc(&state.marks.lock().expect("mark lock")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkBody {
    key: String,
}

async fn add_mark(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let body: MarkBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("mark body: {e}")))?;
    let key = parse_key(&body.key)?;
    if !state.workspace.in_some_report(&key) {
        return Err(ApiError::bad_request(format!(
            "{key} is not an error slice in any loaded report"
        )));
    }
    let mut basket = state.marks.lock().expect("mark lock");
    let added = basket.add(key)?;
    let status = if added { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, marks_doc(&basket)).into_response())
}

async fn remove_mark(State(state): State<Arc<AppState>>, Path(text): Path<String>) -> ApiResult {
    let key = parse_key(&text)?;
    let mut basket = state.marks.lock().expect("mark lock");
    if !basket.remove(&key)? {
        return Err(ApiError::not_found(format!("{key} is not marked")));
    }
    Ok(marks_doc(&basket))
}

#[derive(Deserialize)]
struct ExportQuery {
    model: Option<String>,
    budget: Option<usize>,
    pool: Option<String>,
    out: Option<String>,
}

async fn export_marks(State(state): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult {
    let ws = &state.workspace;
    let model = match &q.model {
        Some(id) => ws
            .model(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`")))?,
        None => ws
            .models
            .first()
            .ok_or_else(|| ApiError::bad_request("workspace has no models"))?,
    };
    let pool = q
        .pool
        .clone()
        .or_else(|| ws.pool_path().map(|p| p.display().to_string()))
        .ok_or_else(|| ApiError::bad_request("workspace has no pool; pass ?pool="))?;
    let budget = q.budget.unwrap_or(500);
    let out = q.out.clone().unwrap_or_else(|| "plan.json".into());
    let pinned: Vec<String> = state
        .marks
        .lock()
        .expect("mark lock")
        .keys()
        .iter()
        .filter(|k| model.report.contains(k))
        .map(|k| k.to_string())
        .collect();
    let mut argv: Vec<String> = vec![
        "slicewise".into(),
        "select".into(),
        "--report".into(),
        model.report_path.display().to_string(),
        "--schema".into(),
        ws.root.join(&ws.manifest.schema).display().to_string(),
        "--pool".into(),
        pool,
        "--budget".into(),
        budget.to_string(),
    ];
    for key in &pinned {
        argv.push("--pin".into());
        argv.push(key.clone());
    }
    argv.push("--out".into());
    argv.push(out);
    Ok(doc(
        "select-invocation",
        json!({ "model_id": model.id, "pinned": pinned, "argv": argv }),
    ))
}

#[derive(Deserialize)]
struct OverlapQuery {
    a: String,
    b: String,
    fraction: Option<f64>,
}

async fn overlap(State(state): State<Arc<AppState>>, Query(q): Query<OverlapQuery>) -> ApiResult {
    let ws = &state.workspace;
    let find = |id: &str| {
        ws.model(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`")))
    };
    let (a, b) = (find(&q.a)?, find(&q.b)?);
    let fraction = q.fraction.unwrap_or(0.1);
    let bad = |e: crate::analyze::AnalyzeError| ApiError::bad_request(e.to_string());
    let forward = slice_overlap(&a.report, &b.report, fraction).map_err(bad)?;
    let backward = slice_overlap(&b.report, &a.report, fraction).map_err(bad)?;
    Ok(doc(
        "overlap",
        json!({ "a": a.id, "b": b.id, "fraction": fraction, "overlap": forward, "reverse": backward }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnumerateBody {
    #[serde(default)]
    algorithm: Algorithm,
    max_depth: Option<usize>,
    min_count: Option<usize>,
}

async fn start_enumeration(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let body: EnumerateBody = if body.is_empty() {
        EnumerateBody {
            algorithm: Algorithm::default(),
            max_depth: None,
            min_count: None,
        }
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("job body: {e}")))?
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = EnumConfig::new(
        body.max_depth.unwrap_or(DEFAULT_MAX_DEPTH),
        body.min_count.unwrap_or(DEFAULT_MIN_COUNT),
    )
    .with_threads(threads);
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = state.next_job.fetch_add(1, Ordering::Relaxed);
    let status = JobStatus {
        id,
        state: JobState::Running,
        algorithm: body.algorithm,
        max_depth: cfg.max_depth,
        min_count: cfg.min_count,
        slices: None,
        lattice_id: None,
        output: None,
        error: None,
    };
    state.jobs.lock().expect("job lock").insert(id, status.clone());
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let ws = &worker.workspace;
        let result = body
            .algorithm
            .run(&build_index(&ws.dataset), &cfg)
            .map_err(|e| e.to_string())
            .and_then(|lattice| {
                let dir = ws.root.join("jobs");
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                let path = dir.join(format!("job-{id}.lattice.json"));
                let file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
                lattice
                    .write_json(std::io::BufWriter::new(file))
                    .map_err(|e| e.to_string())?;
                Ok((lattice.len(), lattice.fingerprint().to_string(), path))
            });
        let mut jobs = worker.jobs.lock().expect("job lock");
        let job = jobs.get_mut(&id).expect("job registered");
        match result {
            Ok((slices, lattice_id, path)) => {
                job.state = JobState::Succeeded;
                job.slices = Some(slices);
                job.lattice_id = Some(lattice_id);
                job.output = Some(path);
            }
            Err(e) => {
                job.state = JobState::Failed;
                job.error = Some(e);
            }
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        doc("job", serde_json::to_value(status).expect("job serializes")),
    )
        .into_response())
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad job id `{id}`")))?;
    let jobs = state.jobs.lock().expect("job lock");
    let job = jobs
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no job {id}")))?;
    Ok(doc("job", serde_json::to_value(job).expect("job serializes")))
}

/// Every route path declared in the served interface description.
pub fn documented_paths() -> BTreeSet<String> {
    let spec: Value = serde_json::from_str(OPENAPI).expect("bundled interface description parses");
    spec["paths"]
        .as_object()
        .map(|p| p.keys().cloned().collect())
        .unwrap_or_default()
}
