//! Row-packed grid presentation of the scored hierarchy.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AssetHierarchy, ElementId, ElementLibrary, PresentMode, Role, ScoringConfig,
};

pub const DEFAULT_CANVAS_WIDTH: f64 = 1200.0;
pub const PRESENTATION_FILE: &str = "presentation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub element_id: ElementId,
    pub cluster: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentationLayout {
    pub canvas_width: f64,
    pub present: PresentMode,
    /// Reading order: left to right, then top to bottom.
    pub tiles: Vec<Tile>,
    pub cluster_order: Vec<String>,
    /// Bottom edge of the last row; may exceed any nominal canvas height.
    pub content_height: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutOptions {
    pub canvas_width: f64,
    pub gap: f64,
    pub present: PresentMode,
    /// Seed for the uniform mode shuffle.
    pub seed: u64,
    /// Elements hidden by the user, excluded like suppressed ones.
    #[serde(default)]
    pub hidden: BTreeSet<ElementId>,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            canvas_width: DEFAULT_CANVAS_WIDTH,
            gap: 0.0,
            present: PresentMode::Sized,
            seed: 0,
            hidden: BTreeSet::new(),
        }
    }
}

/// Cutout pixel size per element.
pub type ElementSizes = BTreeMap<ElementId, (u32, u32)>;

pub fn element_sizes(library: &ElementLibrary) -> ElementSizes {
    library
        .elements
        .iter()
        .map(|(id, e)| (id.clone(), (e.bbox.w, e.bbox.h)))
        .collect()
}

/// Visible leaves in cluster DFS order with their role and cluster path.
pub fn visible_leaves(
    hierarchy: &AssetHierarchy,
    hidden: &BTreeSet<ElementId>,
) -> Vec<(ElementId, Role, String)> {
    let mut out = Vec::new();
    for role in Role::ALL {
        hierarchy
            .category(role)
            .walk(&mut Vec::new(), &mut |path, c| {
                for leaf in &c.leaves {
                    if !hierarchy.suppressed.contains(leaf) && !hidden.contains(leaf) {
                        out.push((leaf.clone(), role, crate::model::path_key(path)));
                    }
                }
            });
    }
    out
}

/// Packs tiles row by row. Sized mode uses each element's score height;
/// uniform mode uses the non-character base height and a seeded shuffle.
pub fn layout_grid(
    hierarchy: &AssetHierarchy,
    sizes: &ElementSizes,
    scoring: &ScoringConfig,
    options: &LayoutOptions,
) -> Result<PresentationLayout> {
    if !(options.canvas_width.is_finite() && options.canvas_width > 0.0) {
        return Err(Error::Invalid(format!(
            "canvas width must be positive, got {}",
            options.canvas_width
        )));
    }
    if !(options.gap.is_finite() && options.gap >= 0.0) {
        return Err(Error::Invalid(format!("gap must be >= 0, got {}", options.gap)));
    }
    let mut order = visible_leaves(hierarchy, &options.hidden);
    if options.present == PresentMode::Uniform {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    }

    let canvas = options.canvas_width;
    let mut tiles = Vec::with_capacity(order.len());
    let mut warnings = Vec::new();
    let (mut x, mut y, mut row_h) = (0.0f64, 0.0f64, 0.0f64);
    for (id, _role, cluster) in order {
        let (pw, ph) = *sizes
            .get(&id)
            .ok_or_else(|| Error::Invalid(format!("no size for element {id}")))?;
        let mut h = match options.present {
            PresentMode::Sized => {
                hierarchy
                    .scores
                    .get(&id)
                    .ok_or_else(|| Error::Scoring(format!("element {id} is not scored")))?
                    .height
            }
            PresentMode::Uniform => scoring.h0_other,
        };
        let mut w = h * pw as f64 / ph.max(1) as f64;
        if w > canvas {
            h *= canvas / w;
            w = canvas;
            warnings.push(format!("element {id} downscaled to fit canvas width {canvas}"));
            log::warn!("element {id} wider than canvas; downscaled");
        }
        if x > 0.0 && x + w > canvas {
            y += row_h + options.gap;
            x = 0.0;
            row_h = 0.0;
        }
        tiles.push(Tile {
            element_id: id,
            cluster,
            x,
            y,
            w,
            h,
        });
        x += w + options.gap;
        row_h = row_h.max(h);
    }
    Ok(PresentationLayout {
        canvas_width: canvas,
        present: options.present,
        tiles,
        cluster_order: hierarchy.cluster_order(),
        content_height: y + row_h,
        warnings,
    })
}
