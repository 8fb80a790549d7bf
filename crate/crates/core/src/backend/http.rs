//! The `/v1/*` HTTP/JSON wire protocol.
//!
//! Images travel either as shared-filesystem paths or inline as base64 PNG
//! data. [`router`] serves any [`Backend`] under these routes so the mock
//! can stand in for a real model server.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendResult};
use crate::model::{BoundingBox, CharacterRig, Embedding, Joint, SourceImage};

pub const ROUTE_TAG: &str = "/v1/tag";
pub const ROUTE_DETECT: &str = "/v1/detect";
pub const ROUTE_SEGMENT: &str = "/v1/segment";
pub const ROUTE_EMBED_IMAGE: &str = "/v1/embed/image";
pub const ROUTE_EMBED_TEXT: &str = "/v1/embed/text";
pub const ROUTE_PARSE_CHARACTER: &str = "/v1/parse-character";
pub const ROUTE_LLM: &str = "/v1/llm/complete";
pub const ROUTE_HEALTH: &str = "/v1/health";

/// A file sent by path or inline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Original file name; carries the label for cutouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_base64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub file: FileRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagRequest {
    pub image: ImageRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: ImageRef,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: ImageRef,
    pub bbox: BoundingBox,
    /// Where to write the cutout in shared-path mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub tight_bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png_base64: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    #[serde(flatten)]
    pub file: FileRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Embedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseCharacterRequest {
    #[serde(flatten)]
    pub file: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirePart {
    pub part_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png_base64: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseCharacterResponse {
    pub parts: Vec<WirePart>,
    pub joints: Vec<Joint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system_prompt: String,
    pub user_payload: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_json: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: BackendError,
}

pub fn status_for(err: &BackendError) -> StatusCode {
    match err {
        BackendError::Precondition(_) => StatusCode::BAD_REQUEST,
        BackendError::NoCharacter => StatusCode::UNPROCESSABLE_ENTITY,
        BackendError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        BackendError::Transport(_) => StatusCode::BAD_GATEWAY,
        BackendError::Protocol(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn unb64(text: &str) -> BackendResult<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| BackendError::Protocol(format!("bad base64: {e}")))
}

#[derive(Clone)]
struct ServerState {
    backend: Arc<dyn Backend>,
    scratch: Arc<PathBuf>,
}

struct WireError(BackendError);

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(ErrorBody { error: self.0 })).into_response()
    }
}

type WireResult<T> = std::result::Result<Json<T>, WireError>;

/// Serves `backend` under the `/v1/*` routes. Inline payloads are staged in
/// `scratch`.
pub fn router(backend: Arc<dyn Backend>, scratch: PathBuf) -> Router {
    let state = ServerState {
        backend,
        scratch: Arc::new(scratch),
    };
    Router::new()
        .route(ROUTE_HEALTH, get(health))
        .route(ROUTE_TAG, post(tag))
        .route(ROUTE_DETECT, post(detect))
        .route(ROUTE_SEGMENT, post(segment))
        .route(ROUTE_EMBED_IMAGE, post(embed_image))
        .route(ROUTE_EMBED_TEXT, post(embed_text))
        .route(ROUTE_PARSE_CHARACTER, post(parse_character))
        .route(ROUTE_LLM, post(llm))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> std::result::Result<T, WireError>
where
    T: Send + 'static,
    F: FnOnce() -> BackendResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| WireError(BackendError::Transport(e.to_string())))?
        .map_err(WireError)
}

fn scratch_file(scratch: &Path, name: &str) -> PathBuf {
    let unique = uuid_like();
    scratch.join(unique).join(name)
}

fn uuid_like() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    format!("{}-{n}", std::process::id())
}

/// Materializes a file reference on the server side.
fn materialize(file: &FileRef, scratch: &Path, default_name: &str) -> BackendResult<PathBuf> {
    if let Some(data) = &file.data_base64 {
        let name = file
            .file_name
            .as_deref()
            .filter(|n| !n.is_empty() && !n.contains('/') && !n.contains('\\'))
            .unwrap_or(default_name);
        let path = scratch_file(scratch, name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| BackendError::Transport(e.to_string()))?;
        }
        std::fs::write(&path, unb64(data)?).map_err(|e| BackendError::Transport(e.to_string()))?;
        return Ok(path);
    }
    file.path
        .clone()
        .ok_or_else(|| BackendError::Precondition("request carries neither path nor data".into()))
}

fn source_image(img: &ImageRef, scratch: &Path) -> BackendResult<SourceImage> {
    Ok(SourceImage {
        image_id: img.image_id.clone(),
        path: materialize(&img.file, scratch, &format!("{}.png", img.image_id))?,
        width: img.width,
        height: img.height,
    })
}

async fn health(State(s): State<ServerState>) -> WireResult<serde_json::Value> {
    let b = s.backend.clone();
    blocking(move || b.health()).await?;
    Ok(Json(serde_json::json!({
        "status": "ok",
        "backend": s.backend.name(),
        "embedding_dim": s.backend.embedding_dim(),
    })))
}

async fn tag(State(s): State<ServerState>, Json(req): Json<TagRequest>) -> WireResult<super::TagResult> {
    blocking(move || {
        let img = source_image(&req.image, &s.scratch)?;
        s.backend.tag_image(&img)
    })
    .await
    .map(Json)
}

async fn detect(
    State(s): State<ServerState>,
    Json(req): Json<DetectRequest>,
) -> WireResult<super::DetectResult> {
    blocking(move || {
        let img = source_image(&req.image, &s.scratch)?;
        s.backend.detect(&img, &req.label)
    })
    .await
    .map(Json)
}

async fn segment(
    State(s): State<ServerState>,
    Json(req): Json<SegmentRequest>,
) -> WireResult<SegmentResponse> {
    blocking(move || {
        let img = source_image(&req.image, &s.scratch)?;
        let inline = req.out_path.is_none();
        let out = req
            .out_path
            .clone()
            .unwrap_or_else(|| scratch_file(&s.scratch, "cutout.png"));
        let r = s.backend.segment(&img, req.bbox, &out)?;
        if inline {
            let bytes = std::fs::read(&r.mask_path)
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            Ok(SegmentResponse {
                tight_bbox: r.tight_bbox,
                mask_path: None,
                png_base64: Some(b64(&bytes)),
            })
        } else {
            Ok(SegmentResponse {
                tight_bbox: r.tight_bbox,
                mask_path: Some(r.mask_path),
                png_base64: None,
            })
        }
    })
    .await
    .map(Json)
}

async fn embed_image(
    State(s): State<ServerState>,
    Json(req): Json<EmbedImageRequest>,
) -> WireResult<EmbedResponse> {
    blocking(move || {
        let path = materialize(&req.file, &s.scratch, "cutout.png")?;
        s.backend.embed_image(&path).map(|r| EmbedResponse { vector: r.vector })
    })
    .await
    .map(Json)
}

async fn embed_text(
    State(s): State<ServerState>,
    Json(req): Json<EmbedTextRequest>,
) -> WireResult<EmbedResponse> {
    blocking(move || s.backend.embed_text(&req.text).map(|r| EmbedResponse { vector: r.vector }))
        .await
        .map(Json)
}

async fn parse_character(
    State(s): State<ServerState>,
    Json(req): Json<ParseCharacterRequest>,
) -> WireResult<ParseCharacterResponse> {
    blocking(move || {
        let path = materialize(&req.file, &s.scratch, "character.png")?;
        let inline = req.out_dir.is_none();
        let out_dir = req
            .out_dir
            .clone()
            .unwrap_or_else(|| scratch_file(&s.scratch, "parts"));
        let CharacterRig { parts, joints } = s.backend.parse_character(&path, &out_dir)?.rig;
        let mut wire = Vec::with_capacity(parts.len());
        for p in parts {
            if inline {
                let bytes = std::fs::read(&p.mask_path)
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                wire.push(WirePart {
                    part_name: p.part_name,
                    mask_path: None,
                    png_base64: Some(b64(&bytes)),
                });
            } else {
                wire.push(WirePart {
                    part_name: p.part_name,
                    mask_path: Some(p.mask_path),
                    png_base64: None,
                });
            }
        }
        Ok(ParseCharacterResponse { parts: wire, joints })
    })
    .await
    .map(Json)
}

async fn llm(State(s): State<ServerState>, Json(req): Json<LlmRequest>) -> WireResult<LlmResponse> {
    blocking(move || {
        s.backend
            .llm_complete(&req.system_prompt, &req.user_payload)
            .map(|r| LlmResponse {
                raw_text: r.raw_text,
                parsed_json: r.parsed_json,
            })
    })
    .await
    .map(Json)
}
