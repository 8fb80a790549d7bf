//! Deterministic in-process backend for desk-scale runs.
//!
//! Ground truth for tagging and detection comes from an optional sidecar
//! `<image stem>.mock.json` next to each image:
//!
//! ```json
//! { "tags": [{"text": "boy", "category": "object"}],
//!   "regions": [{"label": "boy", "x": 10, "y": 20, "w": 40, "h": 90, "confidence": 0.9}] }
//! ```
//!
//! Images without a sidecar get a synthetic annotation derived from the seed
//! and the image id. Segmentation crops the box with an opaque rectangular
//! mask. Text embeddings are seeded Gaussian vectors keyed on the string;
//! image embeddings are the label's text embedding plus a small seeded noise
//! vector keyed on the cutout pixels, renormalized.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbaImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    knowledge, Backend, BackendError, BackendResult, DetectResult, Detection, EmbedResult,
    LlmStructuredResult, ParseCharacterResult, SegmentResult, TagResult,
};
use crate::model::{
    BoundingBox, CharacterRig, Embedding, Joint, JointRole, LabelCategory, RigPart, SemanticLabel,
    SourceImage,
};

pub const MOCK_EMBEDDING_DIM: usize = 64;
pub const MOCK_IMAGE_NOISE: f64 = 0.25;
const SIDECAR_SUFFIX: &str = ".mock.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRegion {
    pub label: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.9
}

/// Sidecar ground truth for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockAnnotation {
    #[serde(default)]
    pub tags: Vec<SemanticLabel>,
    #[serde(default)]
    pub regions: Vec<MockRegion>,
}

impl MockAnnotation {
    pub fn sidecar_path(image_path: &Path) -> PathBuf {
        let stem = image_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        image_path.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"))
    }
}

pub struct MockBackend {
    seed: u64,
    dim: usize,
    noise: f64,
    images: Mutex<HashMap<PathBuf, Arc<RgbaImage>>>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            dim: MOCK_EMBEDDING_DIM,
            noise: MOCK_IMAGE_NOISE,
            images: Mutex::new(HashMap::new()),
        }
    }

    /// Scale of the image-embedding perturbation; 0 makes image and label
    /// embeddings identical.
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn gaussian_unit(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// Seeded unit vector for `text`.
    pub fn text_vector(&self, text: &str) -> Vec<f64> {
        let mut rng = self.rng(&[b"text", text.as_bytes()]);
        self.gaussian_unit(&mut rng)
    }

    fn annotation(&self, image: &SourceImage) -> BackendResult<MockAnnotation> {
        let sidecar = MockAnnotation::sidecar_path(&image.path);
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar)
                .map_err(|e| BackendError::Transport(format!("{}: {e}", sidecar.display())))?;
            return serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("{}: {e}", sidecar.display())));
        }
        if !image.path.exists() {
            return Err(BackendError::Precondition(format!(
                "image {} not readable",
                image.path.display()
            )));
        }
        Ok(self.synthetic_annotation(image))
    }

    fn synthetic_annotation(&self, image: &SourceImage) -> MockAnnotation {
        let mut rng = self.rng(&[
            b"annotation",
            image.image_id.as_bytes(),
            &image.width.to_le_bytes(),
            &image.height.to_le_bytes(),
        ]);
        let vocab: Vec<&str> = knowledge::vocabulary().into_iter().collect();
        let count = rng.random_range(3..=6usize).min(vocab.len());
        let mut picked: Vec<&str> = Vec::new();
        while picked.len() < count {
            let l = vocab[rng.random_range(0..vocab.len())];
            if !picked.contains(&l) {
                picked.push(l);
            }
        }
        let mut tags = Vec::new();
        let mut regions = Vec::new();
        for label in picked {
            let scene = knowledge::is_scenery(label);
            let category = if scene {
                LabelCategory::Scene
            } else {
                LabelCategory::Object
            };
            tags.push(SemanticLabel::new(label, category));
            let n = if scene { 1 } else { rng.random_range(1..=2) };
            for _ in 0..n {
                let (x, y, w, h) = if scene {
                    (0, 0, image.width, image.height)
                } else {
                    let w = rng.random_range(1..=image.width.max(2) / 2).max(1);
                    let h = rng.random_range(1..=image.height.max(2) / 2).max(1);
                    let x = rng.random_range(0..=image.width - w);
                    let y = rng.random_range(0..=image.height - h);
                    (x, y, w, h)
                };
                regions.push(MockRegion {
                    label: label.to_string(),
                    x,
                    y,
                    w,
                    h,
                    confidence: 0.5 + 0.5 * rng.random::<f64>(),
                });
            }
        }
        tags.push(SemanticLabel::new("bright", LabelCategory::Attribute));
        MockAnnotation { tags, regions }
    }

    fn load(&self, path: &Path) -> BackendResult<Arc<RgbaImage>> {
        if let Some(img) = self.images.lock().ok().and_then(|m| m.get(path).cloned()) {
            return Ok(img);
        }
        let img = image::open(path)
            .map_err(|e| BackendError::Precondition(format!("{}: {e}", path.display())))?
            .to_rgba8();
        let img = Arc::new(img);
        if let Ok(mut cache) = self.images.lock() {
            if cache.len() >= 16 {
                cache.clear();
            }
            cache.insert(path.to_path_buf(), img.clone());
        }
        Ok(img)
    }
}

/// Label encoded in a cutout file name `<label>_<id>.png`.
fn label_from_cutout(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    match stem.rsplit_once('_') {
        Some((label, _)) if !label.is_empty() => label.replace('-', " "),
        _ => stem.to_string(),
    }
}

fn write_png(img: &RgbaImage, path: &Path) -> BackendResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| BackendError::Transport(format!("{}: {e}", parent.display())))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))
}

/// Part rectangles as fractions (x0, y0, x1, y1) of the cutout.
const PARTS: [(&str, [f64; 4]); 6] = [
    ("head", [0.3, 0.0, 0.7, 0.25]),
    ("torso", [0.25, 0.25, 0.75, 0.6]),
    ("left_arm", [0.0, 0.25, 0.25, 0.6]),
    ("right_arm", [0.75, 0.25, 1.0, 0.6]),
    ("left_leg", [0.25, 0.6, 0.5, 1.0]),
    ("right_leg", [0.5, 0.6, 0.75, 1.0]),
];

const JOINTS: [(&str, f64, f64, JointRole); 10] = [
    ("neck", 0.5, 0.25, JointRole::RotationCenter),
    ("left_shoulder", 0.25, 0.28, JointRole::RotationCenter),
    ("right_shoulder", 0.75, 0.28, JointRole::RotationCenter),
    ("left_hip", 0.375, 0.6, JointRole::RotationCenter),
    ("right_hip", 0.625, 0.6, JointRole::RotationCenter),
    ("head_top", 0.5, 0.0, JointRole::Auxiliary),
    ("left_hand", 0.1, 0.6, JointRole::Auxiliary),
    ("right_hand", 0.9, 0.6, JointRole::Auxiliary),
    ("left_foot", 0.375, 1.0, JointRole::Auxiliary),
    ("right_foot", 0.625, 1.0, JointRole::Auxiliary),
];

impl Backend for MockBackend {
    fn name(&self) -> String {
        format!("mock(seed={})", self.seed)
    }

    fn embedding_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn tag_image(&self, image: &SourceImage) -> BackendResult<TagResult> {
        Ok(TagResult {
            tags: self.annotation(image)?.tags,
        })
    }

    fn detect(&self, image: &SourceImage, label: &str) -> BackendResult<DetectResult> {
        let label = crate::model::normalize_label(label);
        let boxes = self
            .annotation(image)?
            .regions
            .into_iter()
            .filter(|r| crate::model::normalize_label(&r.label) == label)
            .map(|r| Detection {
                label: label.clone(),
                bbox: BoundingBox::new(r.x, r.y, r.w, r.h),
                confidence: r.confidence,
            })
            .collect();
        Ok(DetectResult { boxes })
    }

    fn segment(
        &self,
        image: &SourceImage,
        bbox: BoundingBox,
        out_path: &Path,
    ) -> BackendResult<SegmentResult> {
        let src = self.load(&image.path)?;
        if !bbox.fits_within(src.width(), src.height()) {
            return Err(BackendError::Precondition(format!(
                "bbox {bbox:?} outside decoded image"
            )));
        }
        let crop = image::imageops::crop_imm(src.as_ref(), bbox.x, bbox.y, bbox.w, bbox.h).to_image();
        let mut cutout = crop;
        for px in cutout.pixels_mut() {
            px.0[3] = 255;
        }
        write_png(&cutout, out_path)?;
        Ok(SegmentResult {
            mask_path: out_path.to_path_buf(),
            tight_bbox: bbox,
        })
    }

    fn embed_image(&self, cutout: &Path) -> BackendResult<EmbedResult> {
        let img = image::open(cutout)
            .map_err(|e| BackendError::Precondition(format!("{}: {e}", cutout.display())))?
            .to_rgba8();
        let label = label_from_cutout(cutout);
        let base = self.text_vector(&label);
        let mut pixels = Sha256::new();
        pixels.update(img.width().to_le_bytes());
        pixels.update(img.height().to_le_bytes());
        pixels.update(img.as_raw());
        let digest = pixels.finalize();
        let mut rng = self.rng(&[b"image", label.as_bytes(), digest.as_slice()]);
        let noise = self.gaussian_unit(&mut rng);
        let v: Vec<f64> = base
            .iter()
            .zip(&noise)
            .map(|(b, n)| b + self.noise * n)
            .collect();
        let vector = Embedding(v)
            .normalized()
            .ok_or_else(|| BackendError::Protocol("degenerate image embedding".into()))?;
        Ok(EmbedResult { vector })
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbedResult> {
        if text.trim().is_empty() {
            return Err(BackendError::Precondition("embed_text input is empty".into()));
        }
        Ok(EmbedResult {
            vector: Embedding(self.text_vector(text)),
        })
    }

    fn parse_character(
        &self,
        cutout: &Path,
        out_dir: &Path,
    ) -> BackendResult<ParseCharacterResult> {
        let img = self.load(cutout)?;
        let (w, h) = (img.width(), img.height());
        let mut parts = Vec::new();
        for (name, [x0, y0, x1, y1]) in PARTS {
            let px0 = ((x0 * f64::from(w)).floor() as u32).min(w - 1);
            let py0 = ((y0 * f64::from(h)).floor() as u32).min(h - 1);
            let px1 = ((x1 * f64::from(w)).ceil() as u32).clamp(px0 + 1, w);
            let py1 = ((y1 * f64::from(h)).ceil() as u32).clamp(py0 + 1, h);
            let part = image::imageops::crop_imm(img.as_ref(), px0, py0, px1 - px0, py1 - py0).to_image();
            let path = out_dir.join(format!("{name}.png"));
            write_png(&part, &path)?;
            parts.push(RigPart {
                part_name: name.to_string(),
                mask_path: path,
            });
        }
        let joints = JOINTS
            .iter()
            .map(|(name, fx, fy, role)| Joint {
                joint_name: name.to_string(),
                x: fx * f64::from(w),
                y: fy * f64::from(h),
                role: *role,
            })
            .collect();
        Ok(ParseCharacterResult {
            rig: CharacterRig { parts, joints },
        })
    }

    fn llm_complete(
        &self,
        system_prompt: &str,
        user_payload: &str,
    ) -> BackendResult<LlmStructuredResult> {
        if system_prompt.trim().is_empty() || user_payload.trim().is_empty() {
            return Err(BackendError::Precondition("LLM prompts must be non-empty".into()));
        }
        Ok(LlmStructuredResult::from_raw(knowledge::complete(
            system_prompt,
            user_payload,
        )))
    }
}

pub(crate) fn is_living(label: &str) -> bool {
    knowledge::is_living(label)
}
