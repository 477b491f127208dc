//! HTTP+JSON API over one version store.
//!
//! Reads work on a snapshot taken under the store lock. Writes claim the
//! store's writer lease first, so a running scan makes every other write
//! fail with 409 until it ends.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use netmap_core::adapters::{AdapterDescriptor, Backend, ExternalTools, Module, ModuleRegistry};
use netmap_core::model::{GatewayEstimate, NodeId, NodeView, ScanningPolicy};
use netmap_core::orchestrator::{
    preflight, run_policy, CancelToken, FailurePolicy, RunOptions, RunReport, RunSink, ScopeMode, AUTHOR_SCAN,
};
use netmap_core::simnet::SimTopology;
use netmap_core::store::{StoreError, VersionId, VersionMeta, VersionStore, AUTHOR_MANUAL};
use netmap_core::topology::TopologyError;
use netmap_core::TargetSpec;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::graph::{self, DiffDocument, GraphDocument, GraphError};
use crate::runs::RunHandle;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    BadRequest(String),
    Internal(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str, &str) {
        match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid", m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = self.parts();
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownVersion(_) => ApiError::NotFound(e.to_string()),
            StoreError::Conflict => ApiError::Conflict("a scan or another edit is writing to the store".into()),
            StoreError::EmptyChangeSet => ApiError::Conflict(e.to_string()),
            StoreError::Corrupt(_) | StoreError::Io(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Store(e) => e.into(),
            GraphError::Topology(e @ TopologyError::InvalidAggregation(_)) => ApiError::Unprocessable(e.to_string()),
            GraphError::Topology(e) => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        match e.status() {
            StatusCode::UNPROCESSABLE_ENTITY => ApiError::Unprocessable(e.body_text()),
            _ => ApiError::BadRequest(e.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Scan backends the service can hand to a run.
#[derive(Clone, Default)]
pub struct ServiceConfig {
    pub simulation: Option<Arc<SimTopology>>,
    pub tools: ExternalTools,
    /// Registered next to the bundled modules for every run.
    pub extra_modules: Vec<Module>,
    pub audit_dir: Option<PathBuf>,
    /// Directory with the UI's static files.
    pub ui_dir: Option<PathBuf>,
}

struct RunEntry {
    handle: Mutex<RunHandle>,
    cancel: CancelToken,
    thread: Mutex<Option<JoinHandle<()>>>,
}

struct Inner {
    store: Mutex<VersionStore>,
    runs: Mutex<BTreeMap<String, Arc<RunEntry>>>,
    config: ServiceConfig,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(store: VersionStore, config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner { store: Mutex::new(store), runs: Mutex::new(BTreeMap::new()), config }),
        }
    }

    /// Blocks until the run's thread exits.
    pub fn join_run(&self, run_id: &str) {
        let entry = lock(&self.inner.runs).get(run_id).cloned();
        if let Some(t) = entry.and_then(|e| lock(&e.thread).take()) {
            let _ = t.join();
        }
    }

    pub fn run_handle(&self, run_id: &str) -> Option<RunHandle> {
        lock(&self.inner.runs).get(run_id).map(|e| lock(&e.handle).clone())
    }

    fn store(&self) -> MutexGuard<'_, VersionStore> {
        lock(&self.inner.store)
    }

    fn registry(&self, mode: ScanMode) -> ApiResult<ModuleRegistry> {
        let backend = match mode {
            ScanMode::Sim => Backend::Simulated(
                self.inner
                    .config
                    .simulation
                    .clone()
                    .ok_or_else(|| ApiError::Unprocessable("the service was started without a simulated topology".into()))?,
            ),
            ScanMode::Real => Backend::External(self.inner.config.tools.clone()),
        };
        let mut registry = ModuleRegistry::standard(backend);
        for m in &self.inner.config.extra_modules {
            registry.register(m.clone()).map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        Ok(registry)
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/modules", get(modules))
        .route("/api/versions", get(versions))
        .route("/api/versions/{id}", get(version))
        .route("/api/versions/{id}/graph", get(version_graph))
        .route("/api/versions/{id}/nodes/{node}", get(node_view))
        .route("/api/diff/{a}/{b}/graph", get(diff_graph))
        .route("/api/scans", post(start_scan))
        .route("/api/scans/{run_id}", get(scan_status))
        .route("/api/scans/{run_id}/cancel", post(cancel_scan))
        .route("/api/nodes/{id}/gateway", post(set_gateway))
        .route("/api/rollback/{version}", post(rollback));
    let api = match &state.inner.config.ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

async fn modules(State(s): State<AppState>) -> Json<Vec<AdapterDescriptor>> {
    let mode = if s.inner.config.simulation.is_some() { ScanMode::Sim } else { ScanMode::Real };
    Json(s.registry(mode).map(|r| r.descriptors()).unwrap_or_default())
}

async fn versions(State(s): State<AppState>) -> Json<Vec<VersionMeta>> {
    Json(s.store().versions().to_vec())
}

async fn version(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<VersionMeta>> {
    let store = s.store();
    let seq = store.resolve(&id)?;
    Ok(Json(store.version(seq)?.clone()))
}

#[derive(Debug, Deserialize)]
pub struct GraphQuery {
    pub aggregate: Option<String>,
}

async fn version_graph(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<GraphQuery>, QueryRejection>,
) -> ApiResult<Json<GraphDocument>> {
    let Query(q) = q?;
    Ok(Json(graph::graph_document(&s.store(), &id, q.aggregate.as_deref())?))
}

fn parse_node(id: &str) -> ApiResult<NodeId> {
    id.parse::<Ipv4Addr>()
        .map(NodeId::new)
        .map_err(|_| ApiError::Unprocessable(format!("`{id}` is not an IPv4 node id")))
}

async fn node_view(State(s): State<AppState>, Path((id, node)): Path<(String, String)>) -> ApiResult<Json<NodeView>> {
    let node = parse_node(&node)?;
    let store = s.store();
    let ds = store.checkout_dataset(store.resolve(&id)?)?;
    ds.resolve_view(node).map(Json).map_err(|e| ApiError::NotFound(e.to_string()))
}

async fn diff_graph(State(s): State<AppState>, Path((a, b)): Path<(String, String)>) -> ApiResult<Json<DiffDocument>> {
    Ok(Json(graph::diff_document(&s.store(), &a, &b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Sim,
    Real,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScanRequest {
    pub policy: serde_json::Value,
    pub targets: String,
    #[serde(default)]
    pub mode: ScanMode,
    pub iterations: Option<u32>,
    #[serde(default)]
    pub scope_mode: ScopeMode,
    #[serde(default)]
    pub on_failure: FailurePolicy,
}

/// Commits each iteration and mirrors progress into the run handle.
struct ServiceSink {
    state: AppState,
    entry: Arc<RunEntry>,
}

impl RunSink for ServiceSink {
    fn commit(&mut self, dataset: &netmap_core::model::Dataset, message: &str) -> Result<VersionId, StoreError> {
        self.state.store().commit_dataset(dataset, AUTHOR_SCAN, message)
    }

    fn progress(&mut self, report: &RunReport) {
        lock(&self.entry.handle).observe(report);
    }
}

async fn start_scan(
    State(s): State<AppState>,
    body: Result<Json<ScanRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<RunHandle>)> {
    let Json(req) = body?;
    let mut policy: ScanningPolicy =
        serde_json::from_value(req.policy).map_err(|e| ApiError::Unprocessable(format!("policy: {e}")))?;
    if let Some(n) = req.iterations {
        policy.iterations = n;
    }
    if policy.iterations == 0 {
        return Err(ApiError::Unprocessable("iterations must be at least 1".into()));
    }
    let targets = TargetSpec::parse(&req.targets).map_err(|e| ApiError::Unprocessable(format!("targets: {e}")))?;
    if targets.is_empty() {
        return Err(ApiError::Unprocessable("targets must not be empty".into()));
    }
    let registry = s.registry(req.mode)?;
    preflight(&policy, &registry).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let gateway = match req.mode {
        ScanMode::Sim => s.inner.config.simulation.as_ref().map(|t| t.scanner_gateway()),
        ScanMode::Real => Backend::External(s.inner.config.tools.clone()).scanner_gateway(),
    };

    let (lease, start) = {
        let store = s.store();
        let lease = store.try_lease()?;
        (lease, store.head_dataset()?)
    };
    // the orchestrator numbers runs the same way
    let run_id = format!("run-{}", start.meta.runs + 1);
    let entry = Arc::new(RunEntry {
        handle: Mutex::new(RunHandle::new(&run_id, policy.iterations)),
        cancel: CancelToken::new(),
        thread: Mutex::new(None),
    });
    lock(&entry.handle).log(format!("started {} on {}", policy.name, req.targets));
    lock(&s.inner.runs).insert(run_id.clone(), Arc::clone(&entry));

    let opts = RunOptions {
        scope_mode: req.scope_mode,
        on_failure: req.on_failure,
        audit_dir: s.inner.config.audit_dir.clone(),
        ..RunOptions::default()
    };
    let mut sink = ServiceSink { state: s.clone(), entry: Arc::clone(&entry) };
    let worker = Arc::clone(&entry);
    let thread = std::thread::Builder::new()
        .name(run_id.clone())
        .spawn(move || {
            let _lease = lease;
            let result = run_policy(start, &registry, &policy, &targets, gateway, &opts, &worker.cancel, &mut sink);
            let mut h = lock(&worker.handle);
            match result {
                Ok(report) => h.observe(&report),
                Err(e) => h.fail(e.to_string()),
            }
        })
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    *lock(&entry.thread) = Some(thread);
    let handle = lock(&entry.handle).clone();
    Ok((StatusCode::ACCEPTED, Json(handle)))
}

async fn scan_status(State(s): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Json<RunHandle>> {
    s.run_handle(&run_id).map(Json).ok_or_else(|| ApiError::NotFound(format!("unknown run `{run_id}`")))
}

async fn cancel_scan(State(s): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Json<RunHandle>> {
    let entry = lock(&s.inner.runs)
        .get(&run_id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("unknown run `{run_id}`")))?;
    let mut h = lock(&entry.handle);
    if h.status.is_terminal() {
        return Err(ApiError::Conflict(format!("run `{run_id}` already ended")));
    }
    entry.cancel.cancel();
    h.log("cancellation requested");
    Ok(Json(h.clone()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct GatewayRequest {
    pub gateway_address: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditResponse {
    pub version: VersionMeta,
    pub gateway: GatewayEstimate,
}

async fn set_gateway(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<GatewayRequest>, JsonRejection>,
) -> ApiResult<Json<EditResponse>> {
    let Json(req) = body?;
    let node = parse_node(&id)?;
    let gateway: Ipv4Addr = req
        .gateway_address
        .parse()
        .map_err(|_| ApiError::Unprocessable(format!("`{}` is not an IPv4 address", req.gateway_address)))?;
    let mut store = s.store();
    let _lease = store.try_lease()?;
    let mut ds = store.head_dataset()?;
    if !ds.nodes.contains_key(&node) {
        return Err(ApiError::NotFound(format!("unknown node `{node}`")));
    }
    if gateway == node.address() {
        return Err(ApiError::Unprocessable("a node cannot be its own gateway".into()));
    }
    let known = ds.contains_address(gateway)
        || ds.meta.scanner_gateway == Some(gateway)
        || ds.meta.network_entry_point == Some(gateway);
    if !known {
        return Err(ApiError::Unprocessable(format!("gateway {gateway} is not a known node")));
    }
    let estimate = ds.set_manual_gateway(node, gateway).map_err(|e| ApiError::Unprocessable(e.to_string()))?.clone();
    let v = store.commit_dataset(&ds, AUTHOR_MANUAL, &format!("set gateway of {node} to {gateway}"))?;
    let version = store.version(v.seq)?.clone();
    tracing::info!(%node, %gateway, version = v.seq, "manual gateway");
    Ok(Json(EditResponse { version, gateway: estimate }))
}

async fn rollback(State(s): State<AppState>, Path(version): Path<String>) -> ApiResult<Json<VersionMeta>> {
    let mut store = s.store();
    let target = store.resolve(&version)?;
    let _lease = store.try_lease()?;
    let v = store.rollback(target)?;
    Ok(Json(store.version(v.seq)?.clone()))
}

/// Binds and serves until ctrl-c. Non-loopback addresses get a warning,
/// since the API has no authentication.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    if !addr.ip().is_loopback() {
        tracing::warn!(%addr, "serving without authentication on a non-loopback address");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
