//! Model backend protocol.
//!
//! The engine talks to tagging, detection, segmentation, embedding,
//! character-parsing and LLM models only through [`Backend`]. Two
//! implementations ship in-tree: the seeded [`MockBackend`] and the
//! [`RemoteBackend`] HTTP client for the `/v1/*` wire protocol. Any backend
//! can also be served over HTTP with [`http::router`].

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    cutout_header, BoundingBox, CharacterRig, Embedding, JointRole, SemanticLabel, SourceImage,
};

pub mod http;
mod knowledge;
pub mod mock;
pub mod remote;

pub use mock::MockBackend;
pub use remote::{RemoteBackend, Transfer};

pub const ENV_BACKEND_URL: &str = "COLLAGE_BACKEND_URL";
pub const ENV_BACKEND_TIMEOUT: &str = "COLLAGE_BACKEND_TIMEOUT_S";
pub const ENV_MOCK_SEED: &str = "COLLAGE_MOCK_SEED";

pub const DEFAULT_TIMEOUT_S: f64 = 120.0;
pub const DEFAULT_MOCK_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no character detected")]
    NoCharacter,
    #[error("capability unavailable: {0}")]
    Unavailable(String),
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResult {
    pub tags: Vec<SemanticLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResult {
    pub boxes: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub mask_path: PathBuf,
    pub tight_bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResult {
    pub vector: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseCharacterResult {
    pub rig: CharacterRig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmStructuredResult {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_json: Option<serde_json::Value>,
}

impl LlmStructuredResult {
    pub fn from_raw(raw_text: String) -> Self {
        let parsed_json = extract_json(&raw_text);
        LlmStructuredResult {
            raw_text,
            parsed_json,
        }
    }
}

/// Pulls a JSON document out of model text, tolerating code fences and prose
/// around a single object or array.
pub fn extract_json(raw: &str) -> Option<serde_json::Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let unfenced = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.trim_end().strip_suffix("```"));
    if let Some(body) = unfenced {
        if let Ok(v) = serde_json::from_str(body.trim()) {
            return Some(v);
        }
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(start), Some(end)) = (trimmed.find(open), trimmed.rfind(close)) {
            if start < end {
                if let Ok(v) = serde_json::from_str(&trimmed[start..=end]) {
                    return Some(v);
                }
            }
        }
    }
    None
}

/// Operations every model backend provides. Paths refer to a filesystem the
/// caller can read; remote transports map them to the wire format.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    /// Embedding dimension, when known ahead of the first call.
    fn embedding_dim(&self) -> Option<usize> {
        None
    }

    fn tag_image(&self, image: &SourceImage) -> BackendResult<TagResult>;

    fn detect(&self, image: &SourceImage, label: &str) -> BackendResult<DetectResult>;

    /// Cuts out the object inside `bbox` and writes it as an RGBA PNG to `out_path`.
    fn segment(
        &self,
        image: &SourceImage,
        bbox: BoundingBox,
        out_path: &Path,
    ) -> BackendResult<SegmentResult>;

    fn embed_image(&self, cutout: &Path) -> BackendResult<EmbedResult>;

    fn embed_text(&self, text: &str) -> BackendResult<EmbedResult>;

    /// Writes part masks under `out_dir`.
    fn parse_character(&self, cutout: &Path, out_dir: &Path)
        -> BackendResult<ParseCharacterResult>;

    fn llm_complete(&self, system_prompt: &str, user_payload: &str)
        -> BackendResult<LlmStructuredResult>;

    /// Cheap reachability probe.
    fn health(&self) -> BackendResult<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

/// How to reach the model backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<Transfer>,
}

impl BackendDescriptor {
    pub fn mock(seed: u64) -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            base_url: None,
            seed: Some(seed),
            timeout_s: DEFAULT_TIMEOUT_S,
            transfer: None,
        }
    }

    pub fn remote(base_url: impl Into<String>, timeout_s: f64) -> Self {
        BackendDescriptor {
            kind: BackendKind::Remote,
            base_url: Some(base_url.into()),
            seed: None,
            timeout_s,
            transfer: None,
        }
    }

    /// Parses `mock` or a URL, filling seed and timeout from the environment
    /// when not given.
    pub fn parse(spec: &str, seed: Option<u64>, timeout_s: Option<f64>) -> Result<Self> {
        let timeout = timeout_s.or_else(env_timeout).unwrap_or(DEFAULT_TIMEOUT_S);
        if spec.eq_ignore_ascii_case("mock") {
            let seed = seed.or_else(env_seed).unwrap_or(DEFAULT_MOCK_SEED);
            let mut d = Self::mock(seed);
            d.timeout_s = timeout;
            Ok(d)
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(Self::remote(spec.trim_end_matches('/'), timeout))
        } else {
            Err(Error::Invalid(format!(
                "backend must be `mock` or an http(s) URL, got {spec:?}"
            )))
        }
    }

    /// Remote when `COLLAGE_BACKEND_URL` is set, mock otherwise.
    pub fn from_env() -> Self {
        let timeout = env_timeout().unwrap_or(DEFAULT_TIMEOUT_S);
        match std::env::var(ENV_BACKEND_URL) {
            Ok(url) if !url.trim().is_empty() => Self::remote(url.trim().trim_end_matches('/'), timeout),
            _ => {
                let mut d = Self::mock(env_seed().unwrap_or(DEFAULT_MOCK_SEED));
                d.timeout_s = timeout;
                d
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match self.kind {
            BackendKind::Mock if self.seed.is_none() => {
                Err(Error::Invalid("mock backend requires a seed".into()))
            }
            BackendKind::Remote if self.base_url.as_deref().map_or(true, str::is_empty) => {
                Err(Error::Invalid("remote backend requires base_url".into()))
            }
            _ if !(self.timeout_s > 0.0) => Err(Error::Invalid("timeout must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Seed used for seeded presentation decisions.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_MOCK_SEED)
    }

    /// Builds the backend, wrapped in protocol conformance checks.
    pub fn connect(&self) -> Result<Arc<dyn Backend>> {
        self.check()?;
        let inner: Arc<dyn Backend> = match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(self.effective_seed())),
            BackendKind::Remote => Arc::new(RemoteBackend::new(
                self.base_url.clone().unwrap_or_default(),
                Duration::from_secs_f64(self.timeout_s),
                self.transfer.unwrap_or_default(),
            )),
        };
        Ok(Arc::new(Checked::new(inner)))
    }
}

fn env_seed() -> Option<u64> {
    std::env::var(ENV_MOCK_SEED).ok()?.trim().parse().ok()
}

fn env_timeout() -> Option<f64> {
    std::env::var(ENV_BACKEND_TIMEOUT).ok()?.trim().parse().ok()
}

/// Wraps a backend and rejects responses that break the protocol contract.
pub struct Checked {
    inner: Arc<dyn Backend>,
    dim: std::sync::OnceLock<usize>,
}

impl Checked {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        let dim = std::sync::OnceLock::new();
        if let Some(d) = inner.embedding_dim() {
            let _ = dim.set(d);
        }
        Checked { inner, dim }
    }

    fn check_embedding(&self, result: EmbedResult) -> BackendResult<EmbedResult> {
        let v = &result.vector;
        if v.dim() == 0 || v.0.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("embedding is empty or non-finite".into()));
        }
        if !v.is_unit() {
            return Err(BackendError::Protocol(format!(
                "embedding norm {} is not 1",
                v.norm()
            )));
        }
        let expected = *self.dim.get_or_init(|| v.dim());
        if v.dim() != expected {
            return Err(BackendError::Protocol(format!(
                "embedding dimension {} differs from {}",
                v.dim(),
                expected
            )));
        }
        Ok(result)
    }
}

impl Backend for Checked {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn embedding_dim(&self) -> Option<usize> {
        self.dim.get().copied().or_else(|| self.inner.embedding_dim())
    }

    fn tag_image(&self, image: &SourceImage) -> BackendResult<TagResult> {
        let mut result = self.inner.tag_image(image)?;
        for tag in &mut result.tags {
            tag.text = crate::model::normalize_label(&tag.text);
            if tag.text.is_empty() {
                return Err(BackendError::Protocol("empty tag text".into()));
            }
        }
        Ok(result)
    }

    fn detect(&self, image: &SourceImage, label: &str) -> BackendResult<DetectResult> {
        if label.trim().is_empty() {
            return Err(BackendError::Precondition("detect label is empty".into()));
        }
        let result = self.inner.detect(image, label)?;
        for d in &result.boxes {
            if !d.bbox.fits_within(image.width, image.height) {
                return Err(BackendError::Protocol(format!(
                    "box {:?} exceeds image {}x{}",
                    d.bbox, image.width, image.height
                )));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(BackendError::Protocol(format!(
                    "confidence {} outside [0,1]",
                    d.confidence
                )));
            }
        }
        Ok(result)
    }

    fn segment(
        &self,
        image: &SourceImage,
        bbox: BoundingBox,
        out_path: &Path,
    ) -> BackendResult<SegmentResult> {
        if !bbox.fits_within(image.width, image.height) {
            return Err(BackendError::Precondition(format!(
                "bbox {bbox:?} is not inside the image"
            )));
        }
        let result = self.inner.segment(image, bbox, out_path)?;
        if result.tight_bbox.is_empty() {
            return Err(BackendError::Protocol("empty segmentation".into()));
        }
        if !bbox.contains(&result.tight_bbox) {
            return Err(BackendError::Protocol(format!(
                "tight box {:?} escapes prompt box {bbox:?}",
                result.tight_bbox
            )));
        }
        match cutout_header(&result.mask_path) {
            Ok((_, _, true)) => Ok(result),
            Ok(_) => Err(BackendError::Protocol("cutout has no alpha channel".into())),
            Err(e) => Err(BackendError::Protocol(format!(
                "cutout {} unreadable: {e}",
                result.mask_path.display()
            ))),
        }
    }

    fn embed_image(&self, cutout: &Path) -> BackendResult<EmbedResult> {
        let r = self.inner.embed_image(cutout)?;
        self.check_embedding(r)
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbedResult> {
        if text.trim().is_empty() {
            return Err(BackendError::Precondition("embed_text input is empty".into()));
        }
        let r = self.inner.embed_text(text)?;
        self.check_embedding(r)
    }

    fn parse_character(
        &self,
        cutout: &Path,
        out_dir: &Path,
    ) -> BackendResult<ParseCharacterResult> {
        let (w, h, _) = cutout_header(cutout)
            .map_err(|e| BackendError::Precondition(format!("{}: {e}", cutout.display())))?;
        let result = self.inner.parse_character(cutout, out_dir)?;
        let rig = &result.rig;
        if rig.parts.is_empty() {
            return Err(BackendError::Protocol("rig has no parts".into()));
        }
        if !rig.joints.iter().any(|j| j.role == JointRole::RotationCenter) {
            return Err(BackendError::Protocol("rig has no rotation center".into()));
        }
        if !rig.joints_within(w, h) {
            return Err(BackendError::Protocol("rig joint outside cutout bounds".into()));
        }
        Ok(result)
    }

    fn llm_complete(
        &self,
        system_prompt: &str,
        user_payload: &str,
    ) -> BackendResult<LlmStructuredResult> {
        if system_prompt.trim().is_empty() || user_payload.trim().is_empty() {
            return Err(BackendError::Precondition("LLM prompts must be non-empty".into()));
        }
        let mut r = self.inner.llm_complete(system_prompt, user_payload)?;
        if r.parsed_json.is_none() {
            r.parsed_json = extract_json(&r.raw_text);
        }
        Ok(r)
    }

    fn health(&self) -> BackendResult<()> {
        self.inner.health()
    }
}
