//! HTTP+JSON service for interactive plan editing.
//!
//! Sessions live in memory, optionally mirrored to one JSON snapshot file
//! each. Every session carries a version counter; a `PUT` must quote the
//! version it was based on and is refused with 409 when that is stale.
//! Pipeline work runs on the blocking pool against a copy of the plan and
//! is committed only if the version is still the one it started from.
//!
//! | method | path | body | answer |
//! |---|---|---|---|
//! | POST | `/session` | `{caption, topic?, plan? \| dsl?}` | 201 `{id, topic, version, plan}` |
//! | GET | `/session/{id}/plan` | | `{version, plan}` |
//! | PUT | `/session/{id}/plan` | `{version, plan}` | `{version, plan}` |
//! | POST | `/session/{id}/audit` | `{plan?}` | audit report |
//! | POST | `/session/{id}/refine` | `{auditor_mode?, refiner_mode?}` | `{version, plan, approved, entry}` |
//! | GET | `/session/{id}/render.svg` | `?style=icons` | SVG |
//! | POST | `/session/{id}/export` | `{dialect, style?}` | export script |
//! | GET | `/session/{id}/trace` | | loop trace |
//!
//! Errors are `{error, violations?}` with 400, 404, 409, 502 or 503.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use diagplan_core::audit::{audit_plan, AuditReport};
use diagplan_core::dsl::parse_plan;
use diagplan_core::export::{export_script, Dialect, ExportOptions};
use diagplan_core::icon::IconProvider;
use diagplan_core::llm::{CompletionClient, InContextExample};
use diagplan_core::plan::{validate_structure, DiagramPlan, StructuralViolation};
use diagplan_core::planner::{
    AuditorMode, LoopConfig, LoopTrace, Planner, PlannerError, RefinerMode, RevisionSource, Termination, TraceEntry,
};
use diagplan_core::render::{render_svg, RenderOptions, RenderStyle};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::io::write_atomic;

/// What the pipeline needs, shared by all sessions.
pub struct Backend {
    pub client: Option<Arc<dyn CompletionClient>>,
    pub examples: Vec<InContextExample>,
    pub icons: Arc<dyn IconProvider>,
    pub loop_config: LoopConfig,
    pub render: RenderOptions,
    pub export: ExportOptions,
}

impl Backend {
    pub fn offline(icons: Arc<dyn IconProvider>) -> Self {
        Backend {
            client: None,
            examples: Vec::new(),
            icons,
            loop_config: LoopConfig::offline(),
            render: RenderOptions::default(),
            export: ExportOptions::default(),
        }
    }

    fn planner(&self) -> Planner<'_> {
        match &self.client {
            Some(c) => Planner::new(c.as_ref(), &self.examples),
            None => Planner::offline(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub topic: String,
    pub version: u64,
    /// How the current plan came about, recorded on the next trace entry.
    pub source: RevisionSource,
    pub plan: DiagramPlan,
    pub trace: LoopTrace,
    #[serde(skip)]
    render_cache: Option<(u64, RenderStyle, Arc<str>)>,
}

#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
    snapshot_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Store mirrored to `<dir>/<id>.json`; existing snapshots are loaded.
    pub fn with_snapshots(dir: &FsPath) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let store = SessionStore { snapshot_dir: Some(dir.to_path_buf()), ..Default::default() };
        let mut sessions = store.sessions.write().expect("fresh lock");
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let loaded = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<Session>(&t).map_err(|e| e.to_string()));
            match loaded {
                Ok(s) if validate_structure(&s.plan).is_empty() => {
                    sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
                Ok(_) => log::warn!("ignoring snapshot {} with an invalid plan", path.display()),
                Err(e) => log::warn!("ignoring snapshot {}: {e}", path.display()),
            }
        }
        drop(sessions);
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let digest = Sha256::digest(format!("{}:{nanos}:{n}", std::process::id()));
        hex::encode(&digest[..8])
    }

    fn insert(&self, topic: String, plan: DiagramPlan) -> Session {
        let mut map = self.sessions.write().expect("session map poisoned");
        let mut id = self.fresh_id();
        while map.contains_key(&id) {
            id = self.fresh_id();
        }
        let session = Session {
            id: id.clone(),
            topic,
            version: 1,
            source: RevisionSource::Initial,
            plan,
            trace: LoopTrace::default(),
            render_cache: None,
        };
        self.snapshot(&session);
        map.insert(id, Arc::new(Mutex::new(session.clone())));
        session
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn snapshot(&self, session: &Session) {
        let Some(dir) = &self.snapshot_dir else { return };
        let path = dir.join(format!("{}.json", session.id));
        let result = serde_json::to_vec_pretty(session)
            .map_err(|e| e.to_string())
            .and_then(|bytes| write_atomic(&path, &bytes).map_err(|e| e.to_string()));
        if let Err(e) = result {
            log::warn!("cannot write snapshot {}: {e}", path.display());
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub backend: Arc<Backend>,
}

impl AppState {
    pub fn new(store: SessionStore, backend: Backend) -> Self {
        AppState { store: Arc::new(store), backend: Arc::new(backend) }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    violations: Vec<StructuralViolation>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), violations: Vec::new() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn invalid(violations: Vec<StructuralViolation>) -> Self {
        ApiError { violations, ..Self::bad_request("plan is structurally invalid") }
    }

    fn conflict(current: u64) -> Self {
        Self::new(StatusCode::CONFLICT, format!("plan changed meanwhile; current version is {current}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<PlannerError> for ApiError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::NoClient => Self::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            PlannerError::InvalidPlan(v) => Self::invalid(v.0),
            PlannerError::GenerationFailed(_) | PlannerError::Client(_) => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Empty bodies decode as `T::default()`-like `{}`.
fn decode<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(format!("bad request body: {e}")))
}

fn lock(session: &Mutex<Session>) -> ApiResult<std::sync::MutexGuard<'_, Session>> {
    session.lock().map_err(|_| ApiError::internal("session state poisoned"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn checked(plan: DiagramPlan) -> ApiResult<DiagramPlan> {
    let violations = validate_structure(&plan);
    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(ApiError::invalid(violations))
    }
}

#[derive(Deserialize)]
struct CreateRequest {
    #[serde(default)]
    caption: String,
    #[serde(default)]
    topic: String,
    plan: Option<DiagramPlan>,
    dsl: Option<String>,
}

#[derive(Serialize)]
struct VersionedPlan {
    version: u64,
    plan: DiagramPlan,
}

#[derive(Deserialize)]
struct PutRequest {
    version: u64,
    plan: DiagramPlan,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest = decode(&body)?;
    let plan = match (req.plan, req.dsl) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either plan or dsl, not both")),
        (Some(mut plan), None) => {
            if plan.caption.is_empty() {
                plan.caption = req.caption.clone();
            }
            checked(plan)?
        }
        (None, Some(dsl)) => parse_plan(&dsl, &req.caption).map_err(|e| ApiError::bad_request(e.to_string()))?,
        (None, None) => {
            if req.caption.trim().is_empty() {
                return Err(ApiError::bad_request("caption is required to generate a plan"));
            }
            let backend = app.backend.clone();
            let (caption, topic) = (req.caption.clone(), req.topic.clone());
            blocking(move || backend.planner().generate(&caption, &topic)).await??
        }
    };
    let session = app.store.insert(req.topic, plan);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": session.id, "topic": session.topic, "version": session.version, "plan": session.plan })),
    ))
}

async fn get_plan(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<VersionedPlan>> {
    let session = app.store.get(&id)?;
    let s = lock(&session)?;
    Ok(Json(VersionedPlan { version: s.version, plan: s.plan.clone() }))
}

async fn put_plan(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<VersionedPlan>> {
    let session = app.store.get(&id)?;
    let req: PutRequest = decode(&body)?;
    let plan = checked(req.plan)?;
    let mut s = lock(&session)?;
    if req.version != s.version {
        return Err(ApiError::conflict(s.version));
    }
    s.plan = plan;
    s.version += 1;
    s.source = RevisionSource::User;
    s.render_cache = None;
    app.store.snapshot(&s);
    Ok(Json(VersionedPlan { version: s.version, plan: s.plan.clone() }))
}

#[derive(Deserialize)]
struct AuditRequest {
    plan: Option<DiagramPlan>,
}

/// Audits the stored plan, or an unsaved one sent in the body.
async fn audit(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<AuditReport>> {
    let session = app.store.get(&id)?;
    let req: AuditRequest = decode(&body)?;
    let plan = match req.plan {
        Some(p) => checked(p)?,
        None => lock(&session)?.plan.clone(),
    };
    audit_plan(&plan, &app.backend.loop_config.audit).map(Json).map_err(|e| ApiError::invalid(e.0))
}

#[derive(Deserialize)]
struct RefineRequest {
    auditor_mode: Option<AuditorMode>,
    refiner_mode: Option<RefinerMode>,
}

#[derive(Serialize)]
struct RefineResponse {
    version: u64,
    plan: DiagramPlan,
    approved: bool,
    entry: TraceEntry,
}

/// One audit and, unless approved, one revision. The assessed plan is
/// appended to the trace.
async fn refine(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<RefineResponse>> {
    let session = app.store.get(&id)?;
    let req: RefineRequest = decode(&body)?;
    let mut config = app.backend.loop_config.clone();
    config.auditor_mode = req.auditor_mode.unwrap_or(config.auditor_mode);
    config.refiner_mode = req.refiner_mode.unwrap_or(config.refiner_mode);
    if config.needs_client() && app.backend.client.is_none() {
        return Err(PlannerError::NoClient.into());
    }
    let (plan, topic, version, source) = {
        let s = lock(&session)?;
        (s.plan.clone(), s.topic.clone(), s.version, s.source)
    };
    let backend = app.backend.clone();
    let (assessed, assessment, revised) = blocking(move || -> Result<_, PlannerError> {
        let planner = backend.planner();
        let assessment = planner.assess(&plan, &topic, &config)?;
        let revised = if assessment.approved { None } else { Some(planner.revise(&plan, &topic, &assessment, &config)?) };
        Ok((plan, assessment, revised))
    })
    .await??;

    let mut s = lock(&session)?;
    if s.version != version {
        return Err(ApiError::conflict(s.version));
    }
    let entry = TraceEntry {
        plan: assessed,
        source,
        rule_report: Some(assessment.rule_report),
        feedback: assessment.feedback,
        approved: assessment.approved,
    };
    s.trace.entries.push(entry.clone());
    if let Some((next, src)) = revised {
        s.plan = checked(next)?;
        s.source = src;
        s.version += 1;
        s.render_cache = None;
        s.trace.termination = None;
    } else {
        s.trace.termination = Some(Termination::Approved);
    }
    app.store.snapshot(&s);
    Ok(Json(RefineResponse { version: s.version, plan: s.plan.clone(), approved: entry.approved, entry }))
}

#[derive(Deserialize)]
struct RenderQuery {
    #[serde(default)]
    style: RenderStyle,
}

async fn render(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
) -> ApiResult<Response> {
    let session = app.store.get(&id)?;
    let (plan, version) = {
        let s = lock(&session)?;
        if let Some((v, style, svg)) = &s.render_cache {
            if *v == s.version && *style == q.style {
                return Ok(svg_response(svg.to_string()));
            }
        }
        (s.plan.clone(), s.version)
    };
    let backend = app.backend.clone();
    let style = q.style;
    let doc = blocking(move || {
        let options = RenderOptions { style, ..backend.render.clone() };
        render_svg(&plan, &options, backend.icons.as_ref())
    })
    .await?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    for w in &doc.warnings {
        log::debug!("session {id}: {w:?}");
    }
    let mut s = lock(&session)?;
    if s.version == version {
        s.render_cache = Some((version, style, Arc::from(doc.text.as_str())));
    }
    Ok(svg_response(doc.text))
}

fn svg_response(svg: String) -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response()
}

#[derive(Deserialize)]
struct ExportRequest {
    dialect: DialectName,
    #[serde(default)]
    style: RenderStyle,
}

/// Accepts the short CLI names as well as the full dialect names.
#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum DialectName {
    #[serde(alias = "office_automation")]
    Office,
    #[serde(alias = "inkscape_scripting")]
    Inkscape,
}

async fn export(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = app.store.get(&id)?;
    let req: ExportRequest = decode(&body)?;
    let dialect = match req.dialect {
        DialectName::Office => Dialect::OfficeAutomation,
        DialectName::Inkscape => Dialect::InkscapeScripting,
    };
    let plan = lock(&session)?.plan.clone();
    let backend = app.backend.clone();
    let script = blocking(move || {
        let options = ExportOptions { style: req.style, ..backend.export.clone() };
        export_script(&plan, dialect, &options, backend.icons.as_ref())
    })
    .await?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(script).into_response())
}

async fn trace(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<LoopTrace>> {
    let session = app.store.get(&id)?;
    let s = lock(&session)?;
    Ok(Json(s.trace.clone()))
}

/// API routes, with the editor's static files at `/` when `ui_dir` is set.
pub fn router(state: AppState, ui_dir: Option<&FsPath>) -> Router {
    let api = Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/plan", get(get_plan).put(put_plan))
        .route("/session/{id}/audit", post(audit))
        .route("/session/{id}/refine", post(refine))
        .route("/session/{id}/render.svg", get(render))
        .route("/session/{id}/export", post(export))
        .route("/session/{id}/trace", get(trace))
        .with_state(state)
        .layer(CorsLayer::permissive());
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, state: AppState, ui_dir: Option<&FsPath>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
