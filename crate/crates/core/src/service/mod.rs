//! HTTP service.
//!
//! A thin REST shell over [`crate::pipeline`] with an in-process job queue
//! and a directory-tree store. Prepare and curation run as background jobs;
//! scene edits are synchronous and guarded by the scene revision.

mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

pub use error::{ApiError, ErrorBody};
use store::{CollectionRecord, Job, JobError, JobKind, JobState, Store, StoredResponse};

use crate::backend::{BackendDescriptor, BackendError};
use crate::curate::CurateConfig;
use crate::error::{Error, Result, Stage};
use crate::json;
use crate::layout::{LayoutOptions, PRESENTATION_FILE};
use crate::model::{ElementLibrary, PhotoCollection, PresentMode, ScoringConfig, SceneDocument, SelectionMode};
use crate::pipeline::{self, Presentation, SCENE_FILE};
use crate::preprocess::PrepareOptions;
use crate::scene::{self, SceneContext, SceneOp};

pub const ENV_DATA_DIR: &str = "COLLAGE_DATA_DIR";
pub const ENV_BIND_ADDR: &str = "COLLAGE_BIND_ADDR";
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_PREPARE_WORKERS: usize = 2;
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_UPLOAD_BYTES: usize = 1 << 30;

pub fn default_curate_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    /// Backend used when a prepare request names none, and for `/healthz`.
    pub backend: BackendDescriptor,
    pub prepare_workers: usize,
    pub curate_workers: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            bind: DEFAULT_BIND_ADDR.into(),
            backend: BackendDescriptor::from_env(),
            prepare_workers: DEFAULT_PREPARE_WORKERS,
            curate_workers: default_curate_workers(),
        }
    }
}

struct Inner {
    store: Store,
    config: ServiceConfig,
    jobs: Mutex<BTreeMap<String, Job>>,
    prepare_slots: Arc<Semaphore>,
    curate_slots: Arc<Semaphore>,
    scene_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    idempotency: tokio::sync::Mutex<()>,
    counter: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the store and reloads jobs; jobs that were queued or running
    /// when the previous process stopped are marked failed.
    pub fn open(config: ServiceConfig) -> Result<AppState> {
        let store = Store::open(&config.data_dir)?;
        let mut jobs = BTreeMap::new();
        for mut job in store.jobs()? {
            if !job.state.is_finished() {
                job.state = JobState::Failed;
                job.error = Some(JobError {
                    message: "interrupted by a service restart; submit again to rerun".into(),
                    stage: None,
                });
                store.save_job(&job)?;
            }
            jobs.insert(job.job_id.clone(), job);
        }
        Ok(AppState(Arc::new(Inner {
            prepare_slots: Arc::new(Semaphore::new(config.prepare_workers.max(1))),
            curate_slots: Arc::new(Semaphore::new(config.curate_workers.max(1))),
            store,
            config,
            jobs: Mutex::new(jobs),
            scene_locks: Mutex::new(HashMap::new()),
            idempotency: tokio::sync::Mutex::new(()),
            counter: AtomicU64::new(0),
        })))
    }

    pub fn store(&self) -> &Store {
        &self.0.store
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.0.jobs.lock().ok()?.get(id).cloned()
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let Ok(mut jobs) = self.0.jobs.lock() else { return };
        if let Some(job) = jobs.get_mut(id) {
            f(job);
            if let Err(e) = self.0.store.save_job(job) {
                log::error!("persisting job {id}: {e}");
            }
        }
    }

    fn new_job_id(&self, kind: JobKind, target: &str) -> String {
        let n = self.0.counter.fetch_add(1, Ordering::Relaxed);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        format!(
            "job-{}",
            store::short_hash(&[
                format!("{kind:?}").as_bytes(),
                target.as_bytes(),
                &n.to_le_bytes(),
                &nanos.to_le_bytes(),
                &std::process::id().to_le_bytes(),
            ])
        )
    }

    /// Queues `work` on the pool for `kind` and returns the queued job.
    fn spawn_job<F>(&self, kind: JobKind, target: &str, work: F) -> Result<Job>
    where
        F: FnOnce(&AppState, &str) -> Result<Value> + Send + 'static,
    {
        let job = Job {
            job_id: self.new_job_id(kind, target),
            kind,
            state: JobState::Queued,
            progress: 0.0,
            target: target.to_string(),
            report: None,
            error: None,
        };
        self.0.store.save_job(&job)?;
        if let Ok(mut jobs) = self.0.jobs.lock() {
            jobs.insert(job.job_id.clone(), job.clone());
        }
        let slots = match kind {
            JobKind::Prepare => self.0.prepare_slots.clone(),
            JobKind::Curate => self.0.curate_slots.clone(),
        };
        let state = self.clone();
        let id = job.job_id.clone();
        tokio::spawn(async move {
            let _permit = slots.acquire_owned().await;
            state.update_job(&id, |j| j.state = JobState::Running);
            let worker = state.clone();
            let job_id = id.clone();
            let result = tokio::task::spawn_blocking(move || work(&worker, &job_id)).await;
            let result = match result {
                Ok(r) => r,
                Err(e) => Err(Error::Invalid(format!("job panicked: {e}"))),
            };
            state.update_job(&id, |j| match result {
                Ok(report) => {
                    j.state = JobState::Done;
                    j.progress = 1.0;
                    j.report = Some(report);
                }
                Err(e) => {
                    log::warn!("job {} failed: {e}", j.job_id);
                    j.state = JobState::Failed;
                    j.error = Some(JobError {
                        message: e.to_string(),
                        stage: e.stage().map(|s| s.to_string()),
                    });
                }
            });
        });
        Ok(job)
    }

    fn scene_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.0.scene_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(session_id.to_string()).or_default().clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/collections", post(create_collection))
        .route("/collections/{id}/prepare", post(prepare_collection))
        .route("/jobs/{id}", get(get_job))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/presentation", get(get_presentation))
        .route("/sessions/{id}/scene", get(get_scene))
        .route("/sessions/{id}/scene/ops", post(scene_ops))
        .route("/sessions/{id}/export", post(export_session))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `config.bind` and serves in the background; returns the bound
/// address.
pub async fn spawn(config: ServiceConfig) -> Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let bind = config.bind.clone();
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Error::io(&bind, e))?;
    let addr = listener.local_addr().map_err(|e| Error::io(&bind, e))?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("service stopped: {e}");
        }
    });
    Ok((addr, handle))
}

/// Serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let bind = config.bind.clone();
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Error::io(&bind, e))?;
    log::info!("listening on {bind}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| Error::io(&bind, e))
}

pub async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
    else {
        return next.run(req).await;
    };
    let hash = store::short_hash(&[req.uri().path().as_bytes(), key.as_bytes()]);
    let _guard = state.0.idempotency.lock().await;
    if let Some(stored) = state.store().stored_response(&hash) {
        return replay(&stored);
    }
    let resp = next.run(req).await;
    let (parts, body) = resp.into_parts();
    let bytes = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    if !parts.status.is_server_error() {
        let stored = StoredResponse {
            status: parts.status.as_u16(),
            body: String::from_utf8_lossy(&bytes).into_owned(),
        };
        if let Err(e) = state.store().store_response(&hash, &stored) {
            log::error!("storing idempotent response: {e}");
        }
    }
    Response::from_parts(parts, Body::from(bytes))
}

fn replay(stored: &StoredResponse) -> Response {
    let status = StatusCode::from_u16(stored.status).unwrap_or(StatusCode::OK);
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        stored.body.clone(),
    )
        .into_response()
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> std::result::Result<T, ApiError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ApiError::bad_request("request body is not UTF-8"))?;
    let text = if text.trim().is_empty() { "{}" } else { text };
    json::from_str(text).map_err(|e| Error::Parse(e).into())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Serialize)]
struct BackendHealth {
    name: String,
    reachable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn healthz(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let backend = match state.0.config.backend.connect() {
            Ok(b) => {
                let r = b.health();
                BackendHealth {
                    name: b.name(),
                    reachable: r.is_ok(),
                    error: r.err().map(|e| e.to_string()),
                }
            }
            Err(e) => BackendHealth {
                name: format!("{:?}", state.0.config.backend.kind),
                reachable: false,
                error: Some(e.to_string()),
            },
        };
        let store = state.store();
        let mut elements = 0;
        let mut libraries = Vec::new();
        for id in store.library_ids() {
            if let Ok(lib) = ElementLibrary::load(&store.library_dir(&id)) {
                elements += lib.elements.len();
                libraries.push(json!({ "library_id": id, "elements": lib.elements.len(), "labels": lib.label_index.len() }));
            }
        }
        Ok(Json(json!({
            "status": "ok",
            "backend": backend,
            "collections": store.collection_count(),
            "sessions": store.session_count(),
            "elements": elements,
            "libraries": libraries,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterCollection {
    path: PathBuf,
}

fn collection_summary(rec: &CollectionRecord) -> Value {
    json!({ "collection_id": rec.collection_id, "images": rec.images })
}

fn scan(dir: &FsPath) -> ApiResult<Vec<String>> {
    let coll = PhotoCollection::from_dir(dir).map_err(|e| ApiError::from(e).field("path"))?;
    if coll.images.is_empty() {
        return Err(ApiError::bad_request(format!("{} holds no PNG or JPEG images", dir.display())).field("path"));
    }
    Ok(coll
        .images
        .iter()
        .filter_map(|i| i.path.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

fn upload_name(raw: &str) -> Option<String> {
    let name = FsPath::new(raw).file_name()?.to_str()?.to_string();
    let ok = !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    ok.then_some(name)
}

async fn create_collection(State(state): State<AppState>, req: Request) -> ApiResult<(StatusCode, Json<Value>)> {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("multipart/form-data"));
    if multipart {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut files: BTreeMap<String, Bytes> = BTreeMap::new();
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?
        {
            let Some(raw) = field.file_name().map(str::to_string) else { continue };
            let name = upload_name(&raw)
                .ok_or_else(|| ApiError::bad_request(format!("unusable file name {raw:?}")).field("files"))?;
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
            if files.insert(name.clone(), data).is_some() {
                return Err(ApiError::bad_request(format!("duplicate file name {name:?}")).field("files"));
            }
        }
        if files.is_empty() {
            return Err(ApiError::bad_request("no files in upload").field("files"));
        }
        blocking(move || {
            let mut parts: Vec<&[u8]> = Vec::new();
            for (n, d) in &files {
                parts.push(n.as_bytes());
                parts.push(d);
            }
            let id = format!("col-{}", store::short_hash(&parts));
            let store = state.store();
            let target = store.collection_dir(&id);
            if let Some(rec) = store.collection(&id)? {
                return Ok((StatusCode::CREATED, Json(collection_summary(&rec))));
            }
            let tmp = store.tmp_dir("collections", &state.new_job_id(JobKind::Prepare, &id));
            let images = tmp.join("images");
            std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
            for (n, d) in &files {
                std::fs::write(images.join(n), d).map_err(|e| Error::io(images.join(n), e))?;
            }
            let names = match scan(&images) {
                Ok(n) => n,
                Err(e) => {
                    let _ = std::fs::remove_dir_all(&tmp);
                    return Err(e.field("files"));
                }
            };
            let source = std::path::absolute(target.join("images")).map_err(|e| Error::io(&target, e))?;
            let rec = CollectionRecord {
                collection_id: id,
                source,
                uploaded: true,
                images: names,
            };
            json::write_file(&tmp.join(store::COLLECTION_FILE), &rec)?;
            store.commit(&tmp, &target)?;
            Ok((StatusCode::CREATED, Json(collection_summary(&rec))))
        })
        .await
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let reg: RegisterCollection = parse_body(&body)?;
        blocking(move || {
            let dir = std::fs::canonicalize(&reg.path)
                .map_err(|e| ApiError::bad_request(format!("{}: {e}", reg.path.display())).field("path"))?;
            let names = scan(&dir)?;
            let id = format!("col-{}", store::short_hash(&[dir.to_string_lossy().as_bytes()]));
            let store = state.store();
            let rec = CollectionRecord {
                collection_id: id.clone(),
                source: dir,
                uploaded: false,
                images: names,
            };
            if store.collection(&id)?.is_none() {
                json::write_file(&store.collection_dir(&id).join(store::COLLECTION_FILE), &rec)?;
            }
            Ok((StatusCode::CREATED, Json(collection_summary(&rec))))
        })
        .await
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrepareRequest {
    #[serde(default)]
    backend: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    timeout_s: Option<f64>,
}

fn job_accepted(job: &Job, extra: Value) -> (StatusCode, Json<Value>) {
    let mut v = json!({ "job_id": job.job_id, "state": job.state });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    (StatusCode::ACCEPTED, Json(v))
}

async fn prepare_collection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: PrepareRequest = parse_body(&body)?;
    let rec = state
        .store()
        .collection(&id)?
        .ok_or_else(|| ApiError::not_found("collection", &id))?;
    let descriptor = match &req.backend {
        Some(b) => BackendDescriptor::parse(b, req.seed, req.timeout_s).map_err(|e| ApiError::from(e).field("backend"))?,
        None => {
            let mut d = state.0.config.backend.clone();
            if req.seed.is_some() && d.seed.is_some() {
                d.seed = req.seed;
            }
            d
        }
    };
    let options = PrepareOptions {
        confidence: req.confidence.unwrap_or(PrepareOptions::default().confidence),
    };
    if !(0.0..=1.0).contains(&options.confidence) {
        return Err(ApiError::bad_request("confidence must lie in [0, 1]").field("confidence"));
    }
    let job = state.spawn_job(JobKind::Prepare, &id, move |state, job_id| {
        let backend = descriptor.connect()?;
        backend.health().map_err(|e| Error::backend(Stage::Tag, e))?;
        let store = state.store();
        let tmp = store.tmp_dir("libraries", job_id);
        let out = match pipeline::prepare(&rec.source, &tmp, &descriptor, &options) {
            Ok(o) => o,
            Err(e) => {
                let _ = std::fs::remove_dir_all(&tmp);
                return Err(e);
            }
        };
        if out.report.images.iter().all(|i| i.error.is_some()) {
            let _ = std::fs::remove_dir_all(&tmp);
            let first = out.report.images.first().and_then(|i| i.error.clone()).unwrap_or_default();
            return Err(Error::backend(Stage::Tag, BackendError::Transport(format!("every image failed; first: {first}"))));
        }
        store.commit(&tmp, &store.library_dir(&out.library.library_id))?;
        Ok(json!({ "library_id": out.library.library_id, "run_report": out.report }))
    })?;
    Ok(job_accepted(&job, json!({ "collection_id": id })))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub library_id: String,
    pub story: String,
    #[serde(default)]
    pub mode: SelectionMode,
    #[serde(default)]
    pub present: PresentMode,
    /// Diversity, consistency and resolution weights.
    #[serde(default)]
    pub weights: Option<[f64; 3]>,
    /// Shuffle seed for uniform presentation.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub canvas_width: Option<f64>,
}

impl CreateSession {
    pub fn curate_config(&self) -> CurateConfig {
        CurateConfig {
            mode: self.mode,
            scoring: match self.weights {
                Some([a, b, c]) => ScoringConfig::with_weights(a, b, c),
                None => ScoringConfig::default(),
            },
            ..CurateConfig::default()
        }
    }

    pub fn layout_options(&self) -> LayoutOptions {
        let d = LayoutOptions::default();
        LayoutOptions {
            canvas_width: self.canvas_width.unwrap_or(d.canvas_width),
            present: self.present,
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }

    /// Service session id; equal requests map to the same session.
    pub fn session_id(&self) -> String {
        let canonical = json::to_canonical_string(self).unwrap_or_default();
        format!("ses-{}", store::short_hash(&[canonical.as_bytes()]))
    }
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse_body(&body)?;
    crate::curate::check_story(&req.story).map_err(|e| ApiError::from(e).field("story"))?;
    req.curate_config()
        .scoring
        .check()
        .map_err(|e| ApiError::bad_request(e.to_string()).field("weights"))?;
    if let Some(w) = req.canvas_width {
        if !(w.is_finite() && w > 0.0) {
            return Err(ApiError::bad_request("canvas_width must be positive").field("canvas_width"));
        }
    }
    if !state.store().has_library(&req.library_id) {
        return Err(ApiError::not_found("library", &req.library_id).field("library_id"));
    }
    let sid = req.session_id();
    let target = sid.clone();
    let job = state.spawn_job(JobKind::Curate, &sid, move |state, job_id| {
        let store = state.store();
        let dir = store.session_dir(&target);
        if store.has_session(&target) {
            return Ok(json!({ "session_id": target, "reused": true }));
        }
        let lib_dir = store.library_dir(&req.library_id);
        let backend = pipeline::library_backend(&lib_dir)?.connect()?;
        let tmp = store.tmp_dir("sessions", job_id);
        let result = (|| {
            let session = pipeline::curate_into(&lib_dir, &tmp, &req.story, backend.as_ref(), &req.curate_config())?;
            let library = ElementLibrary::load(&lib_dir)?;
            let options = req.layout_options();
            let presentation = pipeline::present(&session, &library, &options)?;
            let scene = pipeline::scene_from_presentation(&session, &library, &presentation)?;
            json::write_file(&tmp.join(PRESENTATION_FILE), &presentation)?;
            json::write_file(&tmp.join(SCENE_FILE), &scene)?;
            json::write_file(&tmp.join(store::LAYOUT_OPTIONS_FILE), &options)?;
            Ok::<_, Error>(session)
        })();
        let session = match result {
            Ok(s) => s,
            Err(e) => {
                let _ = std::fs::remove_dir_all(&tmp);
                return Err(e);
            }
        };
        store.commit(&tmp, &dir)?;
        Ok(json!({
            "session_id": target,
            "curation_id": session.session_id,
            "selection": session.selection,
            "prompt_attempts": session.prompt_attempts,
            "insufficient_assets": session.insufficient_assets,
            "warnings": session.warnings,
        }))
    })?;
    Ok(job_accepted(&job, json!({ "session_id": sid })))
}

fn require_session(state: &AppState, id: &str) -> ApiResult<PathBuf> {
    if state.store().has_session(id) {
        Ok(state.store().session_dir(id))
    } else {
        Err(ApiError::not_found("session", id))
    }
}

async fn get_presentation(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Presentation>> {
    let dir = require_session(&state, &id)?;
    blocking(move || Ok(Json(json::read_file(&dir.join(PRESENTATION_FILE))?))).await
}

async fn get_scene(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SceneDocument>> {
    let dir = require_session(&state, &id)?;
    let lock = state.scene_lock(&id);
    blocking(move || {
        let _g = lock.lock().unwrap_or_else(|p| p.into_inner());
        Ok(Json(json::read_file(&dir.join(SCENE_FILE))?))
    })
    .await
}

/// Body of `POST /sessions/{id}/scene/ops`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpsRequest {
    pub base_revision: u64,
    pub ops: Vec<SceneOp>,
}

fn write_atomic<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    json::write_file(&tmp, value)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

async fn scene_ops(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: OpsRequest = parse_body(&body)?;
    let dir = require_session(&state, &id)?;
    let lock = state.scene_lock(&id);
    blocking(move || {
        let _g = lock.lock().unwrap_or_else(|p| p.into_inner());
        let (session, library) = pipeline::open_session(&dir)?;
        let path = dir.join(SCENE_FILE);
        let current: SceneDocument = json::read_file(&path)?;
        let ctx = SceneContext::new(&session.hierarchy, &library);
        let next = scene::apply_batch(&current, &ctx, req.base_revision, &req.ops)?;
        write_atomic(&path, &next)?;
        Ok(Json(json!({ "revision": next.revision, "scene": next })))
    })
    .await
}

async fn export_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let dir = require_session(&state, &id)?;
    let lock = state.scene_lock(&id);
    blocking(move || {
        let scene: SceneDocument = {
            let _g = lock.lock().unwrap_or_else(|p| p.into_inner());
            json::read_file(&dir.join(SCENE_FILE))?
        };
        let options: LayoutOptions = json::read_file(&dir.join(store::LAYOUT_OPTIONS_FILE))?;
        let out = dir.join(store::EXPORT_DIR);
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        }
        let bundle = pipeline::export_session(&dir, Some(&scene), &options, &out)?;
        Ok(Json(json!({ "revision": scene.revision, "bundle": bundle })))
    })
    .await
}
