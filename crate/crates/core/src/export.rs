//! Export bundle: `assets.json`, `scene.json`, `preview.png` and `cutouts/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::curate::CurationSession;
use crate::error::{Error, ParseError, Result};
use crate::json;
use crate::model::{
    AssetHierarchy, BoundingBox, Canvas, CategoryVocabulary, ElementId, ElementLibrary, Joint,
    Placement, RigPart, Role, SceneDocument, ScoreRecord,
};

pub const FORMAT: &str = "collage-forge/1";
pub const ASSETS_FILE: &str = "assets.json";
pub const SCENE_FILE: &str = "scene.json";
pub const PREVIEW_FILE: &str = "preview.png";
pub const CUTOUTS_DIR: &str = "cutouts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRig {
    /// Mask paths relative to the bundle root.
    pub parts: Vec<RigPart>,
    pub joints: Vec<Joint>,
    pub rotation_centers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub label: String,
    pub source_image_id: String,
    pub role: Role,
    pub cluster: String,
    pub bbox: BoundingBox,
    pub resolution: u64,
    /// Relative to the bundle root.
    pub cutout: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreRecord>,
    pub suppressed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<ExportRig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetsFile {
    pub format: String,
    pub session_id: String,
    pub library_id: String,
    pub story: String,
    pub vocabulary: CategoryVocabulary,
    pub hierarchy: AssetHierarchy,
    pub elements: BTreeMap<ElementId, AssetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format: String,
    pub scene_id: String,
    pub canvas: Canvas,
    /// Back to front.
    pub placements: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub dir: PathBuf,
    pub assets: PathBuf,
    pub scene: PathBuf,
    pub preview: PathBuf,
    pub files_copied: usize,
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    if let Some(parent) = to.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::copy(from, to).map_err(|e| Error::io(from, e))?;
    Ok(())
}

fn load_rgba(path: &Path) -> Result<RgbaImage> {
    Ok(image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgba8())
}

/// Writes the bundle for `scene` into `out_dir`. Rig masks resolve against
/// `session_dir`; cutouts against the library root.
pub fn export_bundle(
    session: &CurationSession,
    session_dir: &Path,
    library: &ElementLibrary,
    scene: &SceneDocument,
    out_dir: &Path,
) -> Result<ExportBundle> {
    let placement_map = session.hierarchy.placement_map();
    for p in &scene.placements {
        if !placement_map.contains_key(&p.element_id) {
            return Err(Error::Export(format!(
                "placement {} refers to element {} which is not in the session",
                p.placement_id, p.element_id
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut files_copied = 0;
    let mut elements = BTreeMap::new();
    for (id, (role, cluster)) in &placement_map {
        let el = library
            .elements
            .get(id)
            .ok_or_else(|| Error::Export(format!("element {id} is missing from the library")))?;
        let file_name = el
            .cutout_path
            .file_name()
            .ok_or_else(|| Error::Export(format!("element {id} has no cutout file name")))?;
        let rel = Path::new(CUTOUTS_DIR).join(file_name);
        copy(&library.cutout_file(el), &out_dir.join(&rel))?;
        files_copied += 1;
        let rig = match session.rigs.get(id) {
            Some(rig) => {
                let mut parts = Vec::with_capacity(rig.parts.len());
                for part in &rig.parts {
                    let name = part.mask_path.file_name().ok_or_else(|| {
                        Error::Export(format!("part {} of {id} has no file name", part.part_name))
                    })?;
                    let part_rel = Path::new(CUTOUTS_DIR).join("parts").join(id).join(name);
                    copy(&session_dir.join(&part.mask_path), &out_dir.join(&part_rel))?;
                    files_copied += 1;
                    parts.push(RigPart {
                        part_name: part.part_name.clone(),
                        mask_path: part_rel,
                    });
                }
                Some(ExportRig {
                    parts,
                    joints: rig.joints.clone(),
                    rotation_centers: rig.rotation_centers().map(|j| j.joint_name.clone()).collect(),
                })
            }
            None => None,
        };
        elements.insert(
            id.clone(),
            AssetEntry {
                label: el.label.clone(),
                source_image_id: el.source_image_id.clone(),
                role: *role,
                cluster: cluster.clone(),
                bbox: el.bbox,
                resolution: el.resolution,
                cutout: rel,
                score: session.hierarchy.scores.get(id).copied(),
                suppressed: session.hierarchy.suppressed.contains(id),
                rig,
            },
        );
    }
    let assets = AssetsFile {
        format: FORMAT.into(),
        session_id: session.session_id.clone(),
        library_id: session.library_id.clone(),
        story: session.story.clone(),
        vocabulary: session.vocabulary.clone(),
        hierarchy: session.hierarchy.clone(),
        elements,
    };
    let scene_file = SceneFile {
        format: FORMAT.into(),
        scene_id: scene.scene_id.clone(),
        canvas: scene.canvas,
        placements: scene.placements.clone(),
    };
    let assets_path = out_dir.join(ASSETS_FILE);
    let scene_path = out_dir.join(SCENE_FILE);
    let preview_path = out_dir.join(PREVIEW_FILE);
    json::write_file(&assets_path, &assets)?;
    json::write_file(&scene_path, &scene_file)?;

    let mut images: BTreeMap<&str, RgbaImage> = BTreeMap::new();
    for p in scene.placements.iter().filter(|p| p.visible) {
        if !images.contains_key(p.element_id.as_str()) {
            let el = &library.elements[&p.element_id];
            images.insert(&p.element_id, load_rgba(&library.cutout_file(el))?);
        }
    }
    let preview = render_preview(scene, |id| images.get(id))?;
    preview.save(&preview_path).map_err(|e| Error::Image {
        path: preview_path.clone(),
        message: e.to_string(),
    })?;
    Ok(ExportBundle {
        dir: out_dir.to_path_buf(),
        assets: assets_path,
        scene: scene_path,
        preview: preview_path,
        files_copied,
    })
}

/// Composites visible placements back to front over white. Sampling is
/// nearest-neighbour; flip is applied before rotation about the center.
pub fn render_preview<'a>(
    scene: &SceneDocument,
    image_for: impl Fn(&str) -> Option<&'a RgbaImage>,
) -> Result<RgbaImage> {
    let Canvas { width, height } = scene.canvas;
    if width == 0 || height == 0 {
        return Err(Error::Export(format!("canvas {width}x{height} is empty")));
    }
    let mut out = RgbaImage::from_pixel(width, height, Rgba([255, 255, 255, 255]));
    for p in scene.placements.iter().filter(|p| p.visible) {
        let Some(src) = image_for(&p.element_id) else {
            return Err(Error::Export(format!("no cutout loaded for {}", p.element_id)));
        };
        draw(&mut out, src, p);
    }
    Ok(out)
}

fn draw(out: &mut RgbaImage, src: &RgbaImage, p: &Placement) {
    let (sw, sh) = (src.width() as f64, src.height() as f64);
    let (w, h) = (sw * p.scale, sh * p.scale);
    let (cx, cy) = (p.x + w / 2.0, p.y + h / 2.0);
    let t = p.rotation.to_radians();
    let (sin, cos) = t.sin_cos();
    let hw = (w * cos.abs() + h * sin.abs()) / 2.0;
    let hh = (w * sin.abs() + h * cos.abs()) / 2.0;
    let x0 = ((cx - hw).floor().max(0.0)) as u32;
    let y0 = ((cy - hh).floor().max(0.0)) as u32;
    let x1 = ((cx + hw).ceil().min(out.width() as f64)).max(0.0) as u32;
    let y1 = ((cy + hh).ceil().min(out.height() as f64)).max(0.0) as u32;
    for py in y0..y1 {
        for px in x0..x1 {
            let dx = px as f64 + 0.5 - cx;
            let dy = py as f64 + 0.5 - cy;
            // Undo the counterclockwise on-screen rotation.
            let u = cos * dx - sin * dy;
            let v = sin * dx + cos * dy;
            let mut lx = u + w / 2.0;
            let ly = v + h / 2.0;
            if p.flip_h {
                lx = w - lx;
            }
            if lx < 0.0 || ly < 0.0 {
                continue;
            }
            let sx = (lx / p.scale).floor();
            let sy = (ly / p.scale).floor();
            if sx >= sw || sy >= sh {
                continue;
            }
            let s = src.get_pixel(sx as u32, sy as u32);
            blend(out.get_pixel_mut(px, py), s);
        }
    }
}

fn blend(dst: &mut Rgba<u8>, src: &Rgba<u8>) {
    let a = src[3] as u32;
    if a == 0 {
        return;
    }
    for c in 0..3 {
        dst[c] = ((src[c] as u32 * a + dst[c] as u32 * (255 - a) + 127) / 255) as u8;
    }
    let da = dst[3] as u32;
    dst[3] = (a + (da * (255 - a) + 127) / 255).min(255) as u8;
}

fn bundle_error(file: &Path, field: &str, message: String) -> Error {
    Error::Parse(ParseError {
        file: Some(file.to_path_buf()),
        field: Some(field.to_string()),
        message,
    })
}

/// Reads a bundle back. The scene's revision counter restarts at 0.
pub fn import_bundle(dir: &Path) -> Result<(AssetHierarchy, SceneDocument)> {
    let assets_path = dir.join(ASSETS_FILE);
    let scene_path = dir.join(SCENE_FILE);
    let preview_path = dir.join(PREVIEW_FILE);
    let assets: AssetsFile = json::read_file(&assets_path)?;
    let scene: SceneFile = json::read_file(&scene_path)?;
    if !preview_path.is_file() {
        return Err(Error::io(
            &preview_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "preview is missing"),
        ));
    }
    for (path, format) in [(&assets_path, &assets.format), (&scene_path, &scene.format)] {
        if format != FORMAT {
            return Err(bundle_error(path, "format", format!("expected {FORMAT}, found {format}")));
        }
    }
    if let Some(problem) = assets.hierarchy.check().into_iter().next() {
        return Err(bundle_error(&assets_path, "hierarchy", problem));
    }
    let leaves = assets.hierarchy.placement_map();
    let mut ids = std::collections::BTreeSet::new();
    for (i, p) in scene.placements.iter().enumerate() {
        if !leaves.contains_key(&p.element_id) {
            return Err(bundle_error(
                &scene_path,
                &format!("placements[{i}].element_id"),
                format!("element {} is not in assets.json", p.element_id),
            ));
        }
        if !ids.insert(p.placement_id.as_str()) {
            return Err(bundle_error(
                &scene_path,
                &format!("placements[{i}].placement_id"),
                format!("duplicate placement id {}", p.placement_id),
            ));
        }
        if !(p.scale.is_finite() && p.scale > 0.0) {
            return Err(bundle_error(
                &scene_path,
                &format!("placements[{i}].scale"),
                format!("scale must be > 0, found {}", p.scale),
            ));
        }
    }
    let doc = SceneDocument {
        scene_id: scene.scene_id,
        canvas: scene.canvas,
        placements: scene.placements,
        revision: 0,
    };
    Ok((assets.hierarchy, doc))
}
