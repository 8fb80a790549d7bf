//! Shared helpers for the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use collage_forge::backend::{
    Backend, BackendResult, DetectResult, EmbedResult, LlmStructuredResult, MockBackend,
    ParseCharacterResult, SegmentResult, TagResult,
};
use collage_forge::model::{
    BoundingBox, ElementLibrary, LabelCategory, SourceImage, VisualElement,
};

pub const STORY: &str = "A sunny day, a boy and a dog are playing in the park";
pub const SEED: u64 = 7;

pub const APPENDIX_LABELS: &[&str] = &[
    "boy", "girl", "woman", "man", "dog", "cat", "park", "sky", "sun", "grass", "flower", "tree",
    "frisbee", "car", "skirt", "bank", "house", "building", "street", "road", "sidewalk", "bench",
    "swing", "slide", "ball", "kite", "umbrella", "hat", "sunglasses", "cloud", "moon", "stars",
    "mountain", "river", "lake", "ocean", "beach", "sand", "boat", "ship", "airplane", "helicopter",
    "train", "bus",
];

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/park")
}

pub fn set<I: IntoIterator<Item = S>, S: ToString>(items: I) -> std::collections::BTreeSet<String> {
    items.into_iter().map(|s| s.to_string()).collect()
}

/// Which prompt a system text belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Prompt {
    Select,
    Keyword,
    Classify,
    Cluster,
    Other,
}

pub fn prompt_kind(system: &str) -> Prompt {
    if system.contains("You are a selector of visual assets") {
        Prompt::Select
    } else if system.contains("You are an assistant for visual assets preparation") {
        Prompt::Keyword
    } else if system.contains("You are a classifier of visual assets") {
        Prompt::Classify
    } else if system.contains("You are a cluster of visual assets") {
        Prompt::Cluster
    } else {
        Prompt::Other
    }
}

type Script = Box<dyn FnMut(Prompt, &str, &str, u32) -> Option<String> + Send>;

/// Mock backend whose LLM replies come from a script. The script sees the
/// prompt kind, system text, payload and the call index for that kind; it
/// returns `None` to defer to the mock.
pub struct ScriptedBackend {
    pub mock: MockBackend,
    script: Mutex<Script>,
    pub calls: Mutex<Vec<(Prompt, String, String)>>,
}

impl ScriptedBackend {
    pub fn new(seed: u64, script: impl FnMut(Prompt, &str, &str, u32) -> Option<String> + Send + 'static) -> Self {
        ScriptedBackend {
            mock: MockBackend::new(seed),
            script: Mutex::new(Box::new(script)),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Replies with `replies` in order for any prompt, then defers.
    pub fn queue(seed: u64, replies: Vec<String>) -> Self {
        let mut q: VecDeque<String> = replies.into();
        Self::new(seed, move |_, _, _, _| q.pop_front())
    }

    pub fn calls_of(&self, kind: Prompt) -> usize {
        self.calls.lock().unwrap().iter().filter(|c| c.0 == kind).count()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> String {
        format!("scripted({})", self.mock.name())
    }
    fn embedding_dim(&self) -> Option<usize> {
        self.mock.embedding_dim()
    }
    fn tag_image(&self, image: &SourceImage) -> BackendResult<TagResult> {
        self.mock.tag_image(image)
    }
    fn detect(&self, image: &SourceImage, label: &str) -> BackendResult<DetectResult> {
        self.mock.detect(image, label)
    }
    fn segment(&self, image: &SourceImage, bbox: BoundingBox, out: &Path) -> BackendResult<SegmentResult> {
        self.mock.segment(image, bbox, out)
    }
    fn embed_image(&self, cutout: &Path) -> BackendResult<EmbedResult> {
        self.mock.embed_image(cutout)
    }
    fn embed_text(&self, text: &str) -> BackendResult<EmbedResult> {
        self.mock.embed_text(text)
    }
    fn parse_character(&self, cutout: &Path, out_dir: &Path) -> BackendResult<ParseCharacterResult> {
        self.mock.parse_character(cutout, out_dir)
    }
    fn llm_complete(&self, system: &str, payload: &str) -> BackendResult<LlmStructuredResult> {
        let kind = prompt_kind(system);
        let index = {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.iter().filter(|c| c.0 == kind).count() as u32;
            calls.push((kind, system.to_string(), payload.to_string()));
            n
        };
        let scripted = (self.script.lock().unwrap())(kind, system, payload, index);
        match scripted {
            Some(raw) => Ok(LlmStructuredResult::from_raw(raw)),
            None => self.mock.llm_complete(system, payload),
        }
    }
}

/// Writes a synthetic library without going through detection: `per_label`
/// elements for each label, each with a small opaque cutout and a mock image
/// embedding.
pub fn synthetic_library(dir: &Path, labels: &[&str], per_label: usize, seed: u64) -> ElementLibrary {
    let mock = MockBackend::new(seed);
    let cutouts = dir.join("cutouts");
    std::fs::create_dir_all(&cutouts).unwrap();
    let mut lib = ElementLibrary::empty(format!("lib-synthetic-{}", labels.len() * per_label), 0);
    lib.root = dir.to_path_buf();
    for (li, label) in labels.iter().enumerate() {
        let scenery = ["park", "sky", "street", "road", "beach", "ocean", "mountain", "lake", "river"].contains(label);
        lib.label_categories.insert(
            label.to_string(),
            if scenery { LabelCategory::Scene } else { LabelCategory::Object },
        );
        for k in 0..per_label {
            let w = 8 + ((li * 7 + k * 13) % 40) as u32;
            let h = 8 + ((li * 11 + k * 5) % 40) as u32;
            let id = format!("{:04x}{:04x}", li, k);
            let file = format!("{}_{id}.png", label.replace(' ', "-"));
            let path = cutouts.join(&file);
            let img = image::RgbaImage::from_fn(w, h, |x, y| {
                image::Rgba([(li * 5) as u8, (k % 256) as u8, ((x + y) % 256) as u8, 255])
            });
            img.save(&path).unwrap();
            let embedding = mock.embed_image(&path).unwrap().vector;
            lib.embedding_dim = embedding.dim();
            lib.label_index.entry(label.to_string()).or_default().push(id.clone());
            lib.elements.insert(
                id.clone(),
                VisualElement {
                    element_id: id,
                    label: label.to_string(),
                    source_image_id: format!("img{k:04}"),
                    bbox: BoundingBox::new(0, 0, w, h),
                    cutout_path: PathBuf::from("cutouts").join(file),
                    resolution: u64::from(w) * u64::from(h),
                    visual_embedding: Some(embedding),
                    keypoints: None,
                },
            );
        }
    }
    lib.save(dir).unwrap();
    collage_forge::json::write_file(
        &dir.join("backend.json"),
        &collage_forge::backend::BackendDescriptor::mock(seed),
    )
    .unwrap();
    lib
}

/// Bytes of every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the command-line binary.
pub fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_collage-forge"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

/// A service instance on an ephemeral port, alive until dropped.
pub struct Server {
    pub base: String,
    pub data_dir: PathBuf,
    runtime: Option<tokio::runtime::Runtime>,
    agent: ureq::Agent,
}

impl Server {
    pub fn start(data_dir: &Path) -> Server {
        let mut config = collage_forge::service::ServiceConfig::new(data_dir);
        config.backend = collage_forge::backend::BackendDescriptor::mock(SEED);
        Self::start_with(config)
    }

    pub fn start_with(mut config: collage_forge::service::ServiceConfig) -> Server {
        config.bind = "127.0.0.1:0".to_string();
        let data_dir = config.data_dir.clone();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let (addr, _handle) = runtime.block_on(collage_forge::service::spawn(config)).unwrap();
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(120)))
            .build()
            .into();
        Server {
            base: format!("http://{addr}"),
            data_dir,
            runtime: Some(runtime),
            agent,
        }
    }

    fn finish(mut resp: ureq::http::Response<ureq::Body>) -> (u16, serde_json::Value) {
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        let value = serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text));
        (status, value)
    }

    pub fn get(&self, path: &str) -> (u16, serde_json::Value) {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call().unwrap())
    }

    pub fn post(&self, path: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_json(body).unwrap())
    }

    pub fn post_raw(&self, path: &str, content_type: &str, body: Vec<u8>, key: Option<&str>) -> (u16, serde_json::Value) {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", content_type);
        if let Some(k) = key {
            req = req.header(collage_forge::service::IDEMPOTENCY_HEADER, k);
        }
        Self::finish(req.send(body).unwrap())
    }

    /// Polls a job until it finishes.
    pub fn wait_job(&self, job_id: &str) -> serde_json::Value {
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(300);
        loop {
            let (status, job) = self.get(&format!("/jobs/{job_id}"));
            assert_eq!(status, 200, "{job}");
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            assert!(std::time::Instant::now() < deadline, "job {job_id} did not finish");
            std::thread::sleep(std::time::Duration::from_millis(20));
        }
    }

    /// Registers `collection`, prepares it and returns the library id.
    pub fn prepare(&self, collection: &Path) -> String {
        let (status, body) = self.post("/collections", &serde_json::json!({ "path": collection }));
        assert_eq!(status, 201, "{body}");
        let id = body["collection_id"].as_str().unwrap().to_string();
        let (status, body) = self.post(&format!("/collections/{id}/prepare"), &serde_json::json!({}));
        assert_eq!(status, 202, "{body}");
        let job = self.wait_job(body["job_id"].as_str().unwrap());
        assert_eq!(job["state"], "done", "{job}");
        job["report"]["library_id"].as_str().unwrap().to_string()
    }

    /// Creates a session and returns its id once curation is done.
    pub fn session(&self, request: &serde_json::Value) -> String {
        let (status, body) = self.post("/sessions", request);
        assert_eq!(status, 202, "{body}");
        let job = self.wait_job(body["job_id"].as_str().unwrap());
        assert_eq!(job["state"], "done", "{job}");
        body["session_id"].as_str().unwrap().to_string()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
