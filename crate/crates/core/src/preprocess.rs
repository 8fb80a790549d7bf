//! Stage I: tag, filter, detect and segment every photo into a cutout library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendDescriptor};
use crate::error::{Error, Result, Stage};
use crate::json;
use crate::model::{
    BoundingBox, ElementLibrary, LabelCategory, PhotoCollection, SemanticLabel, SourceImage,
    VisualElement, CUTOUT_DIR,
};

pub const DEFAULT_CONFIDENCE: f64 = 0.35;
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const BACKEND_FILE: &str = "backend.json";

/// Keeps only object and scene tags; attributes and actions cannot stand
/// for a visual element.
pub fn filter_tags(tags: &[SemanticLabel]) -> Vec<SemanticLabel> {
    tags.iter()
        .filter(|t| matches!(t.category, LabelCategory::Object | LabelCategory::Scene))
        .cloned()
        .collect()
}

/// One physical detection with every label that produced exactly this box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedDetection {
    pub bbox: BoundingBox,
    pub labels: Vec<String>,
}

/// Collapses boxes with identical (x, y, w, h) into one detection carrying
/// the union of labels. Unequal boxes are never merged, however much they
/// overlap. Output is ordered by (y, x, w, h).
pub fn merge_duplicate_detections(boxes: &[(String, BoundingBox)]) -> Vec<MergedDetection> {
    let mut by_box: BTreeMap<(u32, u32, u32, u32), Vec<String>> = BTreeMap::new();
    for (label, b) in boxes {
        let labels = by_box.entry((b.y, b.x, b.w, b.h)).or_default();
        if !labels.contains(label) {
            labels.push(label.clone());
        }
    }
    by_box
        .into_iter()
        .map(|((y, x, w, h), mut labels)| {
            labels.sort();
            MergedDetection {
                bbox: BoundingBox { x, y, w, h },
                labels,
            }
        })
        .collect()
}

/// Eight hex digits of SHA-256 over (image_id, bbox).
pub fn element_id(image_id: &str, bbox: &BoundingBox) -> String {
    let mut h = Sha256::new();
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    for v in [bbox.x, bbox.y, bbox.w, bbox.h] {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..4])
}

/// `<label>_<element_id>.png` with path-unsafe characters replaced.
pub fn cutout_file_name(label: &str, element_id: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| match c {
            ' ' => '-',
            c if c.is_alphanumeric() || c == '-' => c,
            _ => '-',
        })
        .collect();
    format!("{safe}_{element_id}.png")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    /// Detections below this confidence do not become elements.
    pub confidence: f64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub outcome: String,
    pub millis: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub status: ImageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elements: usize,
    pub steps: Vec<StepLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub library_id: String,
    pub backend: String,
    pub confidence: f64,
    pub images: Vec<ImageReport>,
    pub element_count: usize,
    pub elapsed_ms: u64,
}

impl RunReport {
    pub fn failed_images(&self) -> impl Iterator<Item = &ImageReport> {
        self.images.iter().filter(|i| i.status == ImageStatus::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct PrepareOutput {
    pub library: ElementLibrary,
    pub report: RunReport,
}

struct ImageOutcome {
    elements: Vec<(VisualElement, Vec<String>)>,
    categories: Vec<(String, LabelCategory)>,
    report: ImageReport,
}

/// Deterministic id over the collection contents and extraction settings.
pub fn library_id(
    collection: &PhotoCollection,
    descriptor: &BackendDescriptor,
    options: &PrepareOptions,
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!("{:?}|{:?}|{:?}", descriptor.kind, descriptor.seed, descriptor.base_url));
    h.update(options.confidence.to_le_bytes());
    for img in &collection.images {
        h.update(img.image_id.as_bytes());
        h.update(img.width.to_le_bytes());
        h.update(img.height.to_le_bytes());
        let bytes = std::fs::read(&img.path).map_err(|e| Error::io(&img.path, e))?;
        h.update(Sha256::digest(&bytes));
    }
    Ok(format!("lib-{}", hex::encode(&h.finalize()[..8])))
}

/// Runs Stage I over `collection`, writing `library.json`, `run_report.json`,
/// `backend.json` and `cutouts/` into `out_dir`.
///
/// A backend failure on one image marks that image failed in the report and
/// discards its partial output; the run continues.
pub fn prepare_collection(
    collection: &PhotoCollection,
    backend: &dyn Backend,
    descriptor: &BackendDescriptor,
    out_dir: &Path,
    options: &PrepareOptions,
) -> Result<PrepareOutput> {
    if collection.images.is_empty() {
        return Err(Error::Invalid("photo collection is empty".into()));
    }
    collection.check()?;
    let started = Instant::now();
    let cutout_dir = out_dir.join(CUTOUT_DIR);
    std::fs::create_dir_all(&cutout_dir).map_err(|e| Error::io(&cutout_dir, e))?;
    let library_id = library_id(collection, descriptor, options)?;

    let outcomes: Vec<ImageOutcome> = collection
        .images
        .par_iter()
        .map(|img| process_image(img, backend, &cutout_dir, options))
        .collect();

    let mut library = ElementLibrary::empty(library_id.clone(), 0);
    library.root = out_dir.to_path_buf();
    let mut images = Vec::with_capacity(outcomes.len());
    for mut outcome in outcomes {
        for (label, cat) in outcome.categories {
            library.label_categories.entry(label).or_insert(cat);
        }
        let mut kept = 0;
        for (element, labels) in outcome.elements {
            if library.elements.contains_key(&element.element_id) {
                log::warn!(
                    "element id collision on {} from {}; skipped",
                    element.element_id,
                    element.source_image_id
                );
                continue;
            }
            for label in labels {
                library
                    .label_index
                    .entry(label)
                    .or_default()
                    .push(element.element_id.clone());
            }
            if library.embedding_dim == 0 {
                if let Some(e) = &element.visual_embedding {
                    library.embedding_dim = e.dim();
                }
            }
            library.elements.insert(element.element_id.clone(), element);
            kept += 1;
        }
        outcome.report.elements = kept;
        images.push(outcome.report);
    }
    if library.embedding_dim == 0 {
        library.embedding_dim = backend.embedding_dim().unwrap_or(0);
    }
    library
        .label_categories
        .retain(|l, _| library.label_index.contains_key(l));

    library.save(out_dir)?;
    json::write_file(&out_dir.join(BACKEND_FILE), descriptor)?;
    let report = RunReport {
        library_id,
        backend: backend.name(),
        confidence: options.confidence,
        element_count: library.elements.len(),
        images,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    json::write_file(&out_dir.join(RUN_REPORT_FILE), &report)?;
    for img in report.failed_images() {
        log::warn!(
            "image {} failed: {}",
            img.image_id,
            img.error.as_deref().unwrap_or("unknown")
        );
    }
    Ok(PrepareOutput { library, report })
}

fn timed<T>(steps: &mut Vec<StepLog>, step: Stage, label: Option<&str>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    steps.push(StepLog {
        step,
        label: label.map(str::to_string),
        outcome: match &r {
            Ok(_) => "ok".into(),
            Err(e) => e.to_string(),
        },
        millis: t.elapsed().as_millis() as u64,
    });
    r
}

fn process_image(
    img: &SourceImage,
    backend: &dyn Backend,
    cutout_dir: &Path,
    options: &PrepareOptions,
) -> ImageOutcome {
    let mut steps = Vec::new();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = extract_elements(img, backend, cutout_dir, options, &mut steps, &mut written);
    match result {
        Ok((elements, categories)) => {
            log::info!("{}: {} elements", img.image_id, elements.len());
            ImageOutcome {
                report: ImageReport {
                    image_id: img.image_id.clone(),
                    status: ImageStatus::Ok,
                    error: None,
                    elements: elements.len(),
                    steps,
                },
                elements,
                categories,
            }
        }
        Err(err) => {
            for path in written {
                let _ = std::fs::remove_file(path);
            }
            ImageOutcome {
                elements: Vec::new(),
                categories: Vec::new(),
                report: ImageReport {
                    image_id: img.image_id.clone(),
                    status: ImageStatus::Failed,
                    error: Some(err.to_string()),
                    elements: 0,
                    steps,
                },
            }
        }
    }
}

type Extracted = (Vec<(VisualElement, Vec<String>)>, Vec<(String, LabelCategory)>);

fn extract_elements(
    img: &SourceImage,
    backend: &dyn Backend,
    cutout_dir: &Path,
    options: &PrepareOptions,
    steps: &mut Vec<StepLog>,
    written: &mut Vec<PathBuf>,
) -> Result<Extracted> {
    let tags = timed(steps, Stage::Tag, None, || {
        backend
            .tag_image(img)
            .map_err(|e| Error::backend(Stage::Tag, e))
    })?;
    let mut kept = filter_tags(&tags.tags);
    kept.sort_by(|a, b| a.text.cmp(&b.text));
    kept.dedup_by(|a, b| a.text == b.text);

    let mut detections = Vec::new();
    for tag in &kept {
        let found = timed(steps, Stage::Detect, Some(&tag.text), || {
            backend
                .detect(img, &tag.text)
                .map_err(|e| Error::backend(Stage::Detect, e))
        })?;
        for d in found.boxes {
            if d.confidence >= options.confidence {
                detections.push((tag.text.clone(), d.bbox));
            }
        }
    }
    let categories = kept.iter().map(|t| (t.text.clone(), t.category)).collect();

    let mut elements = Vec::new();
    for det in merge_duplicate_detections(&detections) {
        let id = element_id(&img.image_id, &det.bbox);
        let primary = det.labels[0].clone();
        let file_name = cutout_file_name(&primary, &id);
        let out_path = cutout_dir.join(&file_name);
        let seg = timed(steps, Stage::Segment, Some(&primary), || {
            backend
                .segment(img, det.bbox, &out_path)
                .map_err(|e| Error::backend(Stage::Segment, e))
        })?;
        written.push(out_path.clone());
        let embedding = timed(steps, Stage::Embed, Some(&primary), || {
            backend
                .embed_image(&out_path)
                .map_err(|e| Error::backend(Stage::Embed, e))
        })?;
        let element = VisualElement {
            element_id: id,
            label: primary,
            source_image_id: img.image_id.clone(),
            bbox: seg.tight_bbox,
            cutout_path: PathBuf::from(CUTOUT_DIR).join(file_name),
            resolution: seg.tight_bbox.area(),
            visual_embedding: Some(embedding.vector),
            keypoints: None,
        };
        elements.push((element, det.labels));
    }
    Ok((elements, categories))
}
