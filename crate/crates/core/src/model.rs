//! Domain types shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

pub type ElementId = String;

/// File name of the library index inside a library directory.
pub const LIBRARY_FILE: &str = "library.json";
/// Subdirectory holding cutout PNGs.
pub const CUTOUT_DIR: &str = "cutouts";
/// Tolerance on the unit norm of stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceImage {
    pub image_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoCollection {
    pub collection_id: String,
    pub images: Vec<SourceImage>,
}

impl PhotoCollection {
    /// Loads every PNG/JPEG in `dir`, ordered by file name.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                paths.push(path);
            }
        }
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for path in paths {
            let (width, height) = image::image_dimensions(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let image_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            images.push(SourceImage {
                image_id,
                path,
                width,
                height,
            });
        }
        let collection_id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("collection")
            .to_string();
        let collection = PhotoCollection {
            collection_id,
            images,
        };
        collection.check()?;
        Ok(collection)
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Invalid(format!("image {} has zero size", img.image_id)));
            }
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate image_id {}", img.image_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelCategory {
    Object,
    Scene,
    Attribute,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticLabel {
    pub text: String,
    pub category: LabelCategory,
}

impl SemanticLabel {
    pub fn new(text: &str, category: LabelCategory) -> Self {
        SemanticLabel {
            text: normalize_label(text),
            category,
        }
    }
}

/// Lowercases and trims a label, collapsing inner whitespace.
pub fn normalize_label(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        !self.is_empty()
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && u64::from(other.x) + u64::from(other.w) <= u64::from(self.x) + u64::from(self.w)
            && u64::from(other.y) + u64::from(other.h) <= u64::from(self.y) + u64::from(self.h)
    }
}

/// A dense embedding vector. Stored vectors are expected to be unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    /// Returns the vector scaled to unit length; `None` for the zero vector.
    pub fn normalized(mut self) -> Option<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        self.0.iter_mut().for_each(|v| *v /= n);
        Some(self)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointRole {
    RotationCenter,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigPart {
    pub part_name: String,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub joint_name: String,
    pub x: f64,
    pub y: f64,
    pub role: JointRole,
}

/// Part masks and joints for a character cutout. Joint coordinates are in
/// cutout pixel space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRig {
    pub parts: Vec<RigPart>,
    pub joints: Vec<Joint>,
}

impl CharacterRig {
    pub fn joints_within(&self, width: u32, height: u32) -> bool {
        self.joints.iter().all(|j| {
            j.x.is_finite()
                && j.y.is_finite()
                && j.x >= 0.0
                && j.y >= 0.0
                && j.x <= f64::from(width)
                && j.y <= f64::from(height)
        })
    }

    pub fn rotation_centers(&self) -> impl Iterator<Item = &Joint> {
        self.joints
            .iter()
            .filter(|j| j.role == JointRole::RotationCenter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualElement {
    pub element_id: ElementId,
    /// Primary label; aliases live in the library's label index.
    pub label: String,
    pub source_image_id: String,
    /// Tight mask bounding rectangle in source-image pixels.
    pub bbox: BoundingBox,
    /// Relative to the library directory.
    pub cutout_path: PathBuf,
    pub resolution: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<CharacterRig>,
}

/// All cutouts extracted from one photo collection, indexed by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementLibrary {
    pub library_id: String,
    pub embedding_dim: usize,
    pub label_index: BTreeMap<String, Vec<ElementId>>,
    #[serde(with = "elements_as_list")]
    pub elements: BTreeMap<ElementId, VisualElement>,
    /// Tagger category of each indexed label.
    #[serde(default)]
    pub label_categories: BTreeMap<String, LabelCategory>,
    /// Directory the library was loaded from; cutout paths resolve against it.
    #[serde(skip)]
    pub root: PathBuf,
}

mod elements_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ElementId, VisualElement>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<ElementId, VisualElement>, D::Error> {
        let list = Vec::<VisualElement>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for el in list {
            if map.contains_key(&el.element_id) {
                return Err(serde::de::Error::custom(format!(
                    "duplicate element_id {}",
                    el.element_id
                )));
            }
            map.insert(el.element_id.clone(), el);
        }
        Ok(map)
    }
}

impl ElementLibrary {
    pub fn empty(library_id: impl Into<String>, embedding_dim: usize) -> Self {
        ElementLibrary {
            library_id: library_id.into(),
            embedding_dim,
            label_index: BTreeMap::new(),
            elements: BTreeMap::new(),
            label_categories: BTreeMap::new(),
            root: PathBuf::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut lib: ElementLibrary = json::read_file(&dir.join(LIBRARY_FILE))?;
        lib.root = dir.to_path_buf();
        Ok(lib)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        json::write_file(&dir.join(LIBRARY_FILE), self)
    }

    pub fn cutout_file(&self, element: &VisualElement) -> PathBuf {
        self.root.join(&element.cutout_path)
    }

    /// Labels that have at least one element, sorted.
    pub fn labels(&self) -> Vec<String> {
        self.label_index
            .iter()
            .filter(|(_, ids)| !ids.is_empty())
            .map(|(l, _)| l.clone())
            .collect()
    }

    pub fn elements_for(&self, label: &str) -> &[ElementId] {
        self.label_index.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Lists every invariant violation. Pure: only reads cutout headers.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (label, ids) in &self.label_index {
            for id in ids {
                if !self.elements.contains_key(id) {
                    violations.push(Violation::DanglingId {
                        label: label.clone(),
                        element_id: id.clone(),
                    });
                }
            }
        }
        for el in self.elements.values() {
            let path = self.cutout_file(el);
            match cutout_header(&path) {
                Ok((w, h, true)) => {
                    if let Some(rig) = &el.keypoints {
                        if !rig.joints_within(w, h) {
                            violations.push(Violation::JointOutOfBounds {
                                element_id: el.element_id.clone(),
                            });
                        }
                    }
                }
                Ok((_, _, false)) => violations.push(Violation::NoAlpha {
                    element_id: el.element_id.clone(),
                    path,
                }),
                Err(reason) => violations.push(Violation::MissingCutout {
                    element_id: el.element_id.clone(),
                    path,
                    reason,
                }),
            }
            if let Some(e) = &el.visual_embedding {
                if !e.is_unit() {
                    violations.push(Violation::EmbeddingNorm {
                        element_id: el.element_id.clone(),
                        norm: e.norm(),
                    });
                }
                if e.dim() != self.embedding_dim {
                    violations.push(Violation::EmbeddingDim {
                        element_id: el.element_id.clone(),
                        expected: self.embedding_dim,
                        actual: e.dim(),
                    });
                }
            }
            if el.resolution != el.bbox.area() || el.bbox.is_empty() {
                violations.push(Violation::Resolution {
                    element_id: el.element_id.clone(),
                    resolution: el.resolution,
                });
            }
        }
        ValidationReport { violations }
    }
}

/// Reads `library.json` from `dir` and validates it.
pub fn validate_library_dir(dir: &Path) -> Result<ValidationReport> {
    Ok(ElementLibrary::load(dir)?.validate())
}

/// Returns (width, height, has_alpha) from a PNG header.
pub fn cutout_header(path: &Path) -> std::result::Result<(u32, u32, bool), String> {
    use image::ImageDecoder;
    let file = File::open(path).map_err(|e| e.to_string())?;
    let decoder =
        image::codecs::png::PngDecoder::new(BufReader::new(file)).map_err(|e| e.to_string())?;
    let (w, h) = decoder.dimensions();
    Ok((w, h, decoder.color_type().has_alpha()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingId { label: String, element_id: ElementId },
    MissingCutout { element_id: ElementId, path: PathBuf, reason: String },
    NoAlpha { element_id: ElementId, path: PathBuf },
    EmbeddingNorm { element_id: ElementId, norm: f64 },
    EmbeddingDim { element_id: ElementId, expected: usize, actual: usize },
    Resolution { element_id: ElementId, resolution: u64 },
    JointOutOfBounds { element_id: ElementId },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Labels chosen for a story.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSelection {
    pub central: Vec<String>,
    pub related: Vec<String>,
}

impl LabelSelection {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.central.iter().chain(self.related.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.central.is_empty() && self.related.is_empty()
    }
}

/// The three fixed roles behind the top-level categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Character,
    Background,
    Accessory,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Character, Role::Background, Role::Accessory];

    pub fn index(self) -> usize {
        match self {
            Role::Character => 0,
            Role::Background => 1,
            Role::Accessory => 2,
        }
    }
}

/// Display names of the three category roots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub characters: String,
    pub backgrounds: String,
    pub accessories: String,
}

impl Default for CategoryVocabulary {
    fn default() -> Self {
        CategoryVocabulary {
            characters: "characters".into(),
            backgrounds: "backgrounds".into(),
            accessories: "accessories".into(),
        }
    }
}

impl CategoryVocabulary {
    pub fn name(&self, role: Role) -> &str {
        match role {
            Role::Character => &self.characters,
            Role::Background => &self.backgrounds,
            Role::Accessory => &self.accessories,
        }
    }

    pub fn is_default(&self) -> bool {
        *self == CategoryVocabulary::default()
    }

    /// Resolves a loosely written category key ("Character", "Accessories",
    /// "background") to its role.
    pub fn resolve(&self, key: &str) -> Option<Role> {
        let wanted = fold_plural(key);
        let canonical = [
            (Role::Character, "character"),
            (Role::Background, "background"),
            (Role::Accessory, "accessory"),
        ];
        Role::ALL
            .iter()
            .copied()
            .find(|r| fold_plural(self.name(*r)) == wanted)
            .or_else(|| {
                canonical
                    .iter()
                    .find(|(_, n)| fold_plural(n) == wanted)
                    .map(|(r, _)| *r)
            })
    }
}

fn fold_plural(s: &str) -> String {
    let s = normalize_label(s);
    if let Some(stem) = s.strip_suffix("ies") {
        format!("{stem}y")
    } else if let Some(stem) = s.strip_suffix('s') {
        stem.to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    #[serde(default)]
    pub children: Vec<Cluster>,
    #[serde(default)]
    pub leaves: Vec<ElementId>,
}

impl Cluster {
    pub fn named(name: impl Into<String>) -> Self {
        Cluster {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Visits clusters in pre-order with their path from the root.
    pub fn walk<'a>(&'a self, path: &mut Vec<&'a str>, f: &mut dyn FnMut(&[&'a str], &'a Cluster)) {
        path.push(&self.name);
        f(path, self);
        for c in &self.children {
            c.walk(path, f);
        }
        path.pop();
    }

    /// Leaves in DFS order (own leaves before children).
    pub fn leaves_dfs(&self) -> Vec<&ElementId> {
        let mut out = Vec::new();
        self.walk(&mut Vec::new(), &mut |_, c| out.extend(c.leaves.iter()));
        out
    }
}

/// Joins a cluster path into its string key.
pub fn path_key(path: &[&str]) -> String {
    path.join("/")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub s_div: f64,
    pub s_cns: f64,
    pub s_res: f64,
    pub s_total: f64,
    pub height: f64,
}

/// Three category roots plus per-element scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetHierarchy {
    /// Ordered characters, backgrounds, accessories.
    pub categories: Vec<Cluster>,
    #[serde(default)]
    pub scores: BTreeMap<ElementId, ScoreRecord>,
    /// Elements hidden from presentation by score dedup.
    #[serde(default)]
    pub suppressed: BTreeSet<ElementId>,
}

impl AssetHierarchy {
    pub fn empty(vocabulary: &CategoryVocabulary) -> Self {
        AssetHierarchy {
            categories: Role::ALL
                .iter()
                .map(|r| Cluster::named(vocabulary.name(*r)))
                .collect(),
            scores: BTreeMap::new(),
            suppressed: BTreeSet::new(),
        }
    }

    pub fn category(&self, role: Role) -> &Cluster {
        &self.categories[role.index()]
    }

    pub fn category_mut(&mut self, role: Role) -> &mut Cluster {
        &mut self.categories[role.index()]
    }

    /// All leaves in DFS order across the three categories.
    pub fn leaves(&self) -> Vec<&ElementId> {
        self.categories.iter().flat_map(|c| c.leaves_dfs()).collect()
    }

    /// Maps every leaf to its role and owning cluster path.
    pub fn placement_map(&self) -> BTreeMap<ElementId, (Role, String)> {
        let mut map = BTreeMap::new();
        for role in Role::ALL {
            if let Some(root) = self.categories.get(role.index()) {
                root.walk(&mut Vec::new(), &mut |path, c| {
                    for leaf in &c.leaves {
                        map.entry(leaf.clone()).or_insert((role, path_key(path)));
                    }
                });
            }
        }
        map
    }

    /// Cluster paths in DFS order.
    pub fn cluster_order(&self) -> Vec<String> {
        let mut order = Vec::new();
        for root in &self.categories {
            root.walk(&mut Vec::new(), &mut |path, _| order.push(path_key(path)));
        }
        order
    }

    /// Checks the structural invariants, returning a description of each problem.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.categories.len() != 3 {
            problems.push(format!(
                "expected 3 category roots, found {}",
                self.categories.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for root in &self.categories {
            check_cluster(root, &mut seen, &mut problems);
        }
        let root_names: BTreeSet<_> = self.categories.iter().map(|c| &c.name).collect();
        if root_names.len() != self.categories.len() {
            problems.push("category root names are not unique".into());
        }
        problems
    }
}

fn check_cluster(c: &Cluster, seen: &mut BTreeSet<ElementId>, problems: &mut Vec<String>) {
    if c.name.trim().is_empty() {
        problems.push("empty cluster name".into());
    }
    for leaf in &c.leaves {
        if !seen.insert(leaf.clone()) {
            problems.push(format!("element {leaf} appears more than once"));
        }
    }
    let mut names = BTreeSet::new();
    for child in &c.children {
        if !names.insert(child.name.as_str()) {
            problems.push(format!("duplicate sibling cluster {} under {}", child.name, c.name));
        }
        check_cluster(child, seen, problems);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub w_div: f64,
    pub w_cns: f64,
    pub w_res: f64,
    pub h0_character: f64,
    pub k_character: f64,
    pub h0_other: f64,
    pub k_other: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            w_div: 0.333,
            w_cns: 0.333,
            w_res: 0.333,
            h0_character: 150.0,
            k_character: 180.0,
            h0_other: 100.0,
            k_other: 120.0,
        }
    }
}

impl ScoringConfig {
    pub fn with_weights(w_div: f64, w_cns: f64, w_res: f64) -> Self {
        ScoringConfig {
            w_div,
            w_cns,
            w_res,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.w_div,
            self.w_cns,
            self.w_res,
            self.h0_character,
            self.k_character,
            self.h0_other,
            self.k_other,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid("scoring weights and heights must be finite and >= 0".into()));
        }
        if self.h0_character <= 0.0 || self.h0_other <= 0.0 {
            return Err(Error::Invalid("base heights must be positive".into()));
        }
        Ok(())
    }

    pub fn base_height(&self, role: Role) -> f64 {
        match role {
            Role::Character => self.h0_character,
            _ => self.h0_other,
        }
    }

    pub fn scale(&self, role: Role) -> f64 {
        match role {
            Role::Character => self.k_character,
            _ => self.k_other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub placement_id: String,
    pub element_id: ElementId,
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    /// Degrees, counterclockwise on screen.
    pub rotation: f64,
    pub flip_h: bool,
    pub visible: bool,
}

/// A composed collage. Placements are ordered back to front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub scene_id: String,
    pub canvas: Canvas,
    pub placements: Vec<Placement>,
    #[serde(default)]
    pub revision: u64,
}

impl SceneDocument {
    pub fn new(scene_id: impl Into<String>, canvas: Canvas) -> Self {
        SceneDocument {
            scene_id: scene_id.into(),
            canvas,
            placements: Vec::new(),
            revision: 0,
        }
    }

    pub fn placement(&self, id: &str) -> Option<&Placement> {
        self.placements.iter().find(|p| p.placement_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Full,
    KeywordOnly,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Full => "full",
            SelectionMode::KeywordOnly => "keyword_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PresentMode {
    #[default]
    Sized,
    Uniform,
}
