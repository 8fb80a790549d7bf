//! Editable scene documents: placement, transforms, visibility and
//! within-cluster z-order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    AssetHierarchy, Canvas, ElementId, ElementLibrary, Placement, SceneDocument,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("unknown placement {0}")]
    UnknownPlacement(String),
    #[error("unknown element {0}")]
    UnknownElement(String),
    #[error("unknown placement or cluster {0}")]
    UnknownTarget(String),
    #[error("scale factor must be finite and > 0, got {0}")]
    InvalidScale(f64),
    #[error("{0} must be finite")]
    NotFinite(&'static str),
    #[error("placement {placement} cannot move to index {index}: outside cluster {cluster}")]
    CrossCluster {
        placement: String,
        index: usize,
        cluster: String,
    },
    #[error("stale revision: scene is at {current}, edit was based on {base}")]
    StaleRevision { base: u64, current: u64 },
}

impl SceneError {
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            SceneError::UnknownPlacement(_) | SceneError::UnknownElement(_) | SceneError::UnknownTarget(_)
        )
    }
}

pub type SceneResult<T> = std::result::Result<T, SceneError>;

/// What the scene needs to know about each placeable element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementInfo {
    /// Owning cluster path (see [`crate::model::path_key`]).
    pub cluster: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneContext {
    pub elements: BTreeMap<ElementId, ElementInfo>,
}

impl SceneContext {
    /// Every hierarchy leaf, sized by its cutout in `library`.
    pub fn new(hierarchy: &AssetHierarchy, library: &ElementLibrary) -> Self {
        let elements = hierarchy
            .placement_map()
            .into_iter()
            .filter_map(|(id, (_, cluster))| {
                let el = library.elements.get(&id)?;
                Some((
                    id,
                    ElementInfo {
                        cluster,
                        width: el.bbox.w,
                        height: el.bbox.h,
                    },
                ))
            })
            .collect();
        SceneContext { elements }
    }

    fn info(&self, id: &str) -> SceneResult<&ElementInfo> {
        self.elements
            .get(id)
            .ok_or_else(|| SceneError::UnknownElement(id.to_string()))
    }

    fn cluster_of(&self, scene: &SceneDocument, index: usize) -> Option<&str> {
        scene
            .placements
            .get(index)
            .and_then(|p| self.elements.get(&p.element_id))
            .map(|i| i.cluster.as_str())
    }
}

/// One edit. Batches are applied in order, each bumping the revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneOp {
    Place {
        element_id: ElementId,
        x: f64,
        y: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Move {
        placement_id: String,
        x: f64,
        y: f64,
    },
    Copy {
        placement_id: String,
        #[serde(default)]
        dx: f64,
        #[serde(default)]
        dy: f64,
    },
    Delete {
        placement_id: String,
    },
    /// Multiplies the current scale.
    Scale {
        placement_id: String,
        factor: f64,
    },
    Flip {
        placement_id: String,
    },
    /// Adds to the current rotation, counterclockwise.
    Rotate {
        placement_id: String,
        degrees: f64,
    },
    /// `target` is a placement id or a cluster path; a cluster path applies
    /// to every placement in its subtree.
    SetVisible {
        target: String,
        visible: bool,
    },
    /// Moves a placement to a global z-index inside its cluster's block.
    Reorder {
        placement_id: String,
        index: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn finite(v: f64, what: &'static str) -> SceneResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SceneError::NotFinite(what))
    }
}

fn position(scene: &SceneDocument, id: &str) -> SceneResult<usize> {
    scene
        .placements
        .iter()
        .position(|p| p.placement_id == id)
        .ok_or_else(|| SceneError::UnknownPlacement(id.to_string()))
}

fn next_placement_id(scene: &SceneDocument) -> String {
    let max = scene
        .placements
        .iter()
        .filter_map(|p| p.placement_id.strip_prefix('p')?.parse::<u64>().ok())
        .max()
        .unwrap_or(0);
    format!("p{}", max + 1)
}

/// Index range `[start, end)` of the placements belonging to `cluster`.
fn cluster_block(scene: &SceneDocument, ctx: &SceneContext, cluster: &str) -> Option<(usize, usize)> {
    let idx: Vec<usize> = (0..scene.placements.len())
        .filter(|i| ctx.cluster_of(scene, *i) == Some(cluster))
        .collect();
    Some((*idx.first()?, *idx.last()? + 1))
}

/// Applies one op, returning the next scene version.
pub fn apply(scene: &SceneDocument, ctx: &SceneContext, op: &SceneOp) -> SceneResult<SceneDocument> {
    let mut next = scene.clone();
    match op {
        SceneOp::Place {
            element_id,
            x,
            y,
            scale,
        } => {
            let info = ctx.info(element_id)?;
            if !scale.is_finite() || *scale <= 0.0 {
                return Err(SceneError::InvalidScale(*scale));
            }
            let placement = Placement {
                placement_id: next_placement_id(scene),
                element_id: element_id.clone(),
                x: finite(*x, "x")?,
                y: finite(*y, "y")?,
                scale: *scale,
                rotation: 0.0,
                flip_h: false,
                visible: true,
            };
            let at = cluster_block(scene, ctx, &info.cluster)
                .map(|(_, end)| end)
                .unwrap_or(scene.placements.len());
            next.placements.insert(at, placement);
        }
        SceneOp::Move { placement_id, x, y } => {
            let i = position(scene, placement_id)?;
            next.placements[i].x = finite(*x, "x")?;
            next.placements[i].y = finite(*y, "y")?;
        }
        SceneOp::Copy {
            placement_id,
            dx,
            dy,
        } => {
            let i = position(scene, placement_id)?;
            let mut copy = scene.placements[i].clone();
            copy.placement_id = next_placement_id(scene);
            copy.x += finite(*dx, "dx")?;
            copy.y += finite(*dy, "dy")?;
            next.placements.insert(i + 1, copy);
        }
        SceneOp::Delete { placement_id } => {
            let i = position(scene, placement_id)?;
            next.placements.remove(i);
        }
        SceneOp::Scale {
            placement_id,
            factor,
        } => {
            let i = position(scene, placement_id)?;
            if !factor.is_finite() || *factor <= 0.0 {
                return Err(SceneError::InvalidScale(*factor));
            }
            next.placements[i].scale *= factor;
        }
        SceneOp::Flip { placement_id } => {
            let i = position(scene, placement_id)?;
            next.placements[i].flip_h = !next.placements[i].flip_h;
        }
        SceneOp::Rotate {
            placement_id,
            degrees,
        } => {
            let i = position(scene, placement_id)?;
            let r = (next.placements[i].rotation + finite(*degrees, "degrees")?) % 360.0;
            next.placements[i].rotation = if r < 0.0 { r + 360.0 } else { r };
        }
        SceneOp::SetVisible { target, visible } => {
            if let Ok(i) = position(scene, target) {
                next.placements[i].visible = *visible;
            } else {
                let prefix = format!("{target}/");
                let mut hit = false;
                for p in next.placements.iter_mut() {
                    let in_subtree = ctx
                        .elements
                        .get(&p.element_id)
                        .is_some_and(|i| i.cluster == *target || i.cluster.starts_with(&prefix));
                    if in_subtree {
                        p.visible = *visible;
                        hit = true;
                    }
                }
                let known = hit
                    || ctx
                        .elements
                        .values()
                        .any(|i| i.cluster == *target || i.cluster.starts_with(&prefix));
                if !known {
                    return Err(SceneError::UnknownTarget(target.clone()));
                }
            }
        }
        SceneOp::Reorder {
            placement_id,
            index,
        } => {
            let i = position(scene, placement_id)?;
            let cluster = ctx.info(&scene.placements[i].element_id)?.cluster.clone();
            let (start, end) = cluster_block(scene, ctx, &cluster).unwrap_or((i, i + 1));
            if *index < start || *index >= end {
                return Err(SceneError::CrossCluster {
                    placement: placement_id.clone(),
                    index: *index,
                    cluster,
                });
            }
            let p = next.placements.remove(i);
            next.placements.insert(*index, p);
        }
    }
    next.revision = scene.revision + 1;
    Ok(next)
}

/// Applies a batch atomically against `base_revision`.
pub fn apply_batch(
    scene: &SceneDocument,
    ctx: &SceneContext,
    base_revision: u64,
    ops: &[SceneOp],
) -> SceneResult<SceneDocument> {
    if base_revision != scene.revision {
        return Err(SceneError::StaleRevision {
            base: base_revision,
            current: scene.revision,
        });
    }
    let mut current = scene.clone();
    for op in ops {
        current = apply(&current, ctx, op)?;
    }
    Ok(current)
}

/// Axis-aligned rectangle in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn intersects(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

/// Bounding box of a placement after scale and rotation about its center.
pub fn placement_bounds(p: &Placement, width: u32, height: u32) -> Rect {
    let w = width as f64 * p.scale;
    let h = height as f64 * p.scale;
    let (cx, cy) = (p.x + w / 2.0, p.y + h / 2.0);
    let t = p.rotation.to_radians();
    let (s, c) = (t.sin().abs(), t.cos().abs());
    let hw = (w * c + h * s) / 2.0;
    let hh = (w * s + h * c) / 2.0;
    Rect {
        x: cx - hw,
        y: cy - hh,
        w: 2.0 * hw,
        h: 2.0 * hh,
    }
}

/// Visible placements whose bounds intersect `rect`, in z-order.
pub fn box_select(scene: &SceneDocument, ctx: &SceneContext, rect: &Rect) -> Vec<String> {
    scene
        .placements
        .iter()
        .filter(|p| p.visible)
        .filter(|p| {
            ctx.elements
                .get(&p.element_id)
                .is_some_and(|i| placement_bounds(p, i.width, i.height).intersects(rect))
        })
        .map(|p| p.placement_id.clone())
        .collect()
}

/// Lists invariant violations of `scene` against `ctx`.
pub fn check_scene(scene: &SceneDocument, ctx: &SceneContext) -> Vec<String> {
    let mut problems = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    let mut closed: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    let mut last: Option<&str> = None;
    for p in &scene.placements {
        if !ids.insert(p.placement_id.as_str()) {
            problems.push(format!("duplicate placement id {}", p.placement_id));
        }
        if !(p.scale.is_finite() && p.scale > 0.0) {
            problems.push(format!("placement {} has scale {}", p.placement_id, p.scale));
        }
        let Some(info) = ctx.elements.get(&p.element_id) else {
            problems.push(format!("placement {} refers to unknown element {}", p.placement_id, p.element_id));
            continue;
        };
        let cluster = info.cluster.as_str();
        if last != Some(cluster) {
            if closed.contains(cluster) {
                problems.push(format!("cluster {cluster} is not contiguous in z-order"));
            }
            if let Some(prev) = last {
                closed.insert(prev);
            }
            last = Some(cluster);
        }
    }
    problems
}

/// An empty scene sized to `canvas`.
pub fn blank_scene(scene_id: impl Into<String>, canvas: Canvas) -> SceneDocument {
    SceneDocument::new(scene_id, canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> SceneContext {
        let mut elements = BTreeMap::new();
        for (id, cluster) in [("a", "acc/plant"), ("b", "acc/plant"), ("c", "acc/toy"), ("d", "chars")] {
            elements.insert(
                id.to_string(),
                ElementInfo {
                    cluster: cluster.into(),
                    width: 10,
                    height: 20,
                },
            );
        }
        SceneContext { elements }
    }

    fn place(scene: &SceneDocument, id: &str, x: f64) -> SceneDocument {
        apply(
            scene,
            &ctx(),
            &SceneOp::Place {
                element_id: id.into(),
                x,
                y: 0.0,
                scale: 1.0,
            },
        )
        .unwrap()
    }

    fn blank() -> SceneDocument {
        blank_scene("s", Canvas { width: 100, height: 100 })
    }

    #[test]
    fn place_then_delete_restores_scene() {
        let s0 = blank();
        let s1 = place(&s0, "a", 0.0);
        let s2 = apply(&s1, &ctx(), &SceneOp::Delete { placement_id: "p1".into() }).unwrap();
        assert_eq!(s2.placements, s0.placements);
        assert_eq!(s2.revision, 2);
    }

    #[test]
    fn scale_composes() {
        let s = place(&blank(), "a", 0.0);
        let op = SceneOp::Scale {
            placement_id: "p1".into(),
            factor: 2.0,
        };
        let s = apply(&apply(&s, &ctx(), &op).unwrap(), &ctx(), &op).unwrap();
        assert_eq!(s.placements[0].scale, 4.0);
        let bad = SceneOp::Scale {
            placement_id: "p1".into(),
            factor: 0.0,
        };
        assert_eq!(apply(&s, &ctx(), &bad), Err(SceneError::InvalidScale(0.0)));
    }

    #[test]
    fn placing_keeps_clusters_contiguous() {
        let mut s = blank();
        for id in ["a", "c", "d", "b"] {
            s = place(&s, id, 0.0);
        }
        let order: Vec<_> = s.placements.iter().map(|p| p.element_id.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c", "d"]);
        assert!(check_scene(&s, &ctx()).is_empty());
    }

    #[test]
    fn reorder_is_confined_to_cluster() {
        let mut s = blank();
        for id in ["a", "b", "c"] {
            s = place(&s, id, 0.0);
        }
        let ok = apply(
            &s,
            &ctx(),
            &SceneOp::Reorder {
                placement_id: "p2".into(),
                index: 0,
            },
        )
        .unwrap();
        assert_eq!(ok.placements[0].placement_id, "p2");
        let err = apply(
            &s,
            &ctx(),
            &SceneOp::Reorder {
                placement_id: "p2".into(),
                index: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::CrossCluster { .. }));
    }

    #[test]
    fn cluster_visibility_covers_subtree() {
        let mut s = blank();
        for id in ["a", "b", "c", "d"] {
            s = place(&s, id, 0.0);
        }
        let s = apply(
            &s,
            &ctx(),
            &SceneOp::SetVisible {
                target: "acc".into(),
                visible: false,
            },
        )
        .unwrap();
        let vis: Vec<bool> = s.placements.iter().map(|p| p.visible).collect();
        assert_eq!(vis, vec![false, false, false, true]);
        let err = apply(
            &s,
            &ctx(),
            &SceneOp::SetVisible {
                target: "nope".into(),
                visible: false,
            },
        )
        .unwrap_err();
        assert!(err.is_not_found());
    }

    #[test]
    fn box_select_uses_intersection() {
        let mut s = blank();
        s = place(&s, "a", 0.0);
        s = place(&s, "c", 30.0);
        s = place(&s, "d", 80.0);
        let hits = box_select(
            &s,
            &ctx(),
            &Rect {
                x: 5.0,
                y: 5.0,
                w: 30.0,
                h: 5.0,
            },
        );
        assert_eq!(hits, vec!["p1", "p2"]);
    }

    #[test]
    fn rotated_bounds_swap_extent() {
        let p = Placement {
            placement_id: "p1".into(),
            element_id: "a".into(),
            x: 0.0,
            y: 0.0,
            scale: 1.0,
            rotation: 90.0,
            flip_h: false,
            visible: true,
        };
        let r = placement_bounds(&p, 10, 20);
        assert!((r.w - 20.0).abs() < 1e-9 && (r.h - 10.0).abs() < 1e-9);
        assert!((r.x + 5.0).abs() < 1e-9 && (r.y - 5.0).abs() < 1e-9);
    }

    #[test]
    fn stale_batch_is_rejected() {
        let s = place(&blank(), "a", 0.0);
        let err = apply_batch(&s, &ctx(), 0, &[]).unwrap_err();
        assert_eq!(err, SceneError::StaleRevision { base: 0, current: 1 });
    }
}
