//! Directory-level entry points shared by the CLI, the service and the C ABI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendDescriptor};
use crate::curate::{self, CurateConfig, CurationSession};
use crate::error::Result;
use crate::export::{self, ExportBundle};
use crate::json;
use crate::layout::{self, LayoutOptions, PresentationLayout};
use crate::model::{
    AssetHierarchy, Canvas, ElementLibrary, PhotoCollection, PresentMode, Role, SceneDocument,
    SelectionMode,
};
use crate::preprocess::{self, PrepareOptions, PrepareOutput, BACKEND_FILE};
use crate::scene::{self, SceneContext, SceneOp};

pub const SCENE_FILE: &str = "scene.json";

/// What the presentation view consumes: the grid plus the scored hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    pub session_id: String,
    pub layout: PresentationLayout,
    pub hierarchy: AssetHierarchy,
}

/// Stage I over a directory of photos.
pub fn prepare(
    collection_dir: &Path,
    out_dir: &Path,
    descriptor: &BackendDescriptor,
    options: &PrepareOptions,
) -> Result<PrepareOutput> {
    descriptor.check()?;
    let collection = PhotoCollection::from_dir(collection_dir)?;
    let backend = descriptor.connect()?;
    preprocess::prepare_collection(&collection, backend.as_ref(), descriptor, out_dir, options)
}

/// Curates `story` over the library in `library_dir` and saves the session
/// into `session_dir`.
pub fn curate_into(
    library_dir: &Path,
    session_dir: &Path,
    story: &str,
    backend: &dyn Backend,
    config: &CurateConfig,
) -> Result<CurationSession> {
    let library = ElementLibrary::load(library_dir)?;
    std::fs::create_dir_all(session_dir).map_err(|e| crate::Error::io(session_dir, e))?;
    let session = curate::curate(story, &library, backend, config, session_dir)?;
    session.save(session_dir, library_dir)?;
    Ok(session)
}

/// Loads a saved session with the library it was curated from.
pub fn open_session(session_dir: &Path) -> Result<(CurationSession, ElementLibrary)> {
    let session = CurationSession::load(session_dir)?;
    let library = ElementLibrary::load(&CurationSession::library_dir(session_dir)?)?;
    Ok((session, library))
}

pub fn present(
    session: &CurationSession,
    library: &ElementLibrary,
    options: &LayoutOptions,
) -> Result<Presentation> {
    let layout = layout::layout_grid(
        &session.hierarchy,
        &layout::element_sizes(library),
        &session.scoring,
        options,
    )?;
    Ok(Presentation {
        session_id: session.session_id.clone(),
        layout,
        hierarchy: session.hierarchy.clone(),
    })
}

/// A scene with every presented tile placed where the grid put it.
pub fn scene_from_presentation(
    session: &CurationSession,
    library: &ElementLibrary,
    presentation: &Presentation,
) -> Result<SceneDocument> {
    let ctx = SceneContext::new(&session.hierarchy, library);
    let canvas = Canvas {
        width: presentation.layout.canvas_width.ceil().max(1.0) as u32,
        height: presentation.layout.content_height.ceil().max(1.0) as u32,
    };
    let mut doc = scene::blank_scene(format!("{}-scene", session.session_id), canvas);
    for tile in &presentation.layout.tiles {
        let h = ctx
            .elements
            .get(&tile.element_id)
            .map(|i| i.height.max(1) as f64)
            .unwrap_or(1.0);
        doc = scene::apply(
            &doc,
            &ctx,
            &SceneOp::Place {
                element_id: tile.element_id.clone(),
                x: tile.x,
                y: tile.y,
                scale: tile.h / h,
            },
        )?;
    }
    doc.revision = 0;
    Ok(doc)
}

/// Exports `scene`, or the session's default scene when none is given.
pub fn export_session(
    session_dir: &Path,
    scene: Option<&SceneDocument>,
    layout_options: &LayoutOptions,
    out_dir: &Path,
) -> Result<ExportBundle> {
    let (session, library) = open_session(session_dir)?;
    let owned;
    let scene = match scene {
        Some(s) => s,
        None => {
            let saved = session_dir.join(SCENE_FILE);
            owned = if saved.is_file() {
                json::read_file(&saved)?
            } else {
                let p = present(&session, &library, layout_options)?;
                scene_from_presentation(&session, &library, &p)?
            };
            &owned
        }
    };
    export::export_bundle(&session, session_dir, &library, scene, out_dir)
}

/// Backend recorded next to a prepared library.
pub fn library_backend(library_dir: &Path) -> Result<BackendDescriptor> {
    json::read_file(&library_dir.join(BACKEND_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stats> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Stats {
            count: v.len(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// One column of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub mode: SelectionMode,
    pub present: PresentMode,
    pub central: Vec<String>,
    pub related: Vec<String>,
    /// Presented tiles per category name.
    pub elements: std::collections::BTreeMap<String, usize>,
    pub suppressed: usize,
    pub prompt_attempts: u32,
    pub s_total: Option<Stats>,
    pub height: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub library_id: String,
    pub story: String,
    pub variants: Vec<Variant>,
}

fn variant(
    name: &str,
    session: &CurationSession,
    library: &ElementLibrary,
    layout_options: &LayoutOptions,
) -> Result<Variant> {
    let p = present(session, library, layout_options)?;
    let roles = session.roles();
    let mut elements = std::collections::BTreeMap::new();
    for role in Role::ALL {
        elements.insert(session.vocabulary.name(role).to_string(), 0);
    }
    for t in &p.layout.tiles {
        if let Some(role) = roles.get(&t.element_id) {
            *elements.entry(session.vocabulary.name(*role).to_string()).or_insert(0) += 1;
        }
    }
    let shown: std::collections::BTreeSet<&str> =
        p.layout.tiles.iter().map(|t| t.element_id.as_str()).collect();
    Ok(Variant {
        name: name.to_string(),
        mode: session.mode,
        present: layout_options.present,
        central: session.selection.central.clone(),
        related: session.selection.related.clone(),
        elements,
        suppressed: session.hierarchy.suppressed.len(),
        prompt_attempts: session.prompt_attempts,
        s_total: Stats::of(
            session
                .hierarchy
                .scores
                .iter()
                .filter(|(id, _)| shown.contains(id.as_str()))
                .map(|(_, r)| r.s_total),
        ),
        height: Stats::of(p.layout.tiles.iter().map(|t| t.h)),
    })
}

/// Full curation, keyword-only curation and uniform presentation of the
/// full curation, side by side.
pub fn compare(
    library: &ElementLibrary,
    story: &str,
    backend: &dyn Backend,
    config: &CurateConfig,
    layout_options: &LayoutOptions,
) -> Result<CompareReport> {
    let scratch = Path::new("");
    let mut config = config.clone();
    config.parse_characters = false;
    config.mode = SelectionMode::Full;
    let full = curate::curate(story, library, backend, &config, scratch)?;
    config.mode = SelectionMode::KeywordOnly;
    let keyword = curate::curate(story, library, backend, &config, scratch)?;
    let sized = LayoutOptions {
        present: PresentMode::Sized,
        ..layout_options.clone()
    };
    let uniform = LayoutOptions {
        present: PresentMode::Uniform,
        ..layout_options.clone()
    };
    Ok(CompareReport {
        library_id: library.library_id.clone(),
        story: story.to_string(),
        variants: vec![
            variant("full", &full, library, &sized)?,
            variant("keyword_only", &keyword, library, &sized)?,
            variant("uniform", &full, library, &uniform)?,
        ],
    })
}
