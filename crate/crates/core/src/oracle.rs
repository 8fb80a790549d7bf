//! Straight-from-the-formula recomputation of stored scores, used by the
//! `oracle` command to audit a session.

use serde::{Deserialize, Serialize};

use crate::curate::CurationSession;
use crate::error::{Error, Result};
use crate::model::{Cluster, ElementLibrary, Role, ScoreRecord};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiff {
    pub element_id: String,
    pub field: String,
    pub stored: f64,
    pub recomputed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub checked: usize,
    pub tolerance: f64,
    pub max_abs_diff: f64,
    pub diffs: Vec<OracleDiff>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]).powi(2);
    }
    s.sqrt()
}

fn collect<'a>(c: &'a Cluster, path: &mut Vec<String>, out: &mut Vec<(String, &'a Cluster)>) {
    path.push(c.name.clone());
    if !c.leaves.is_empty() {
        out.push((path.join("/"), c));
    }
    for child in &c.children {
        collect(child, path, out);
    }
    path.pop();
}

/// Recomputes every stored score record and lists fields that differ by
/// more than `tolerance`.
pub fn check_session(
    session: &CurationSession,
    library: &ElementLibrary,
    tolerance: f64,
) -> Result<OracleReport> {
    let cfg = &session.scoring;
    let mut report = OracleReport {
        checked: 0,
        tolerance,
        max_abs_diff: 0.0,
        diffs: Vec::new(),
    };
    for (ri, root) in session.hierarchy.categories.iter().enumerate() {
        let character = ri == Role::Character.index();
        let (h0, k) = if character {
            (cfg.h0_character, cfg.k_character)
        } else {
            (cfg.h0_other, cfg.k_other)
        };
        let mut clusters = Vec::new();
        collect(root, &mut Vec::new(), &mut clusters);
        for (path, cluster) in clusters {
            let text = session
                .cluster_embeddings
                .get(&path)
                .ok_or_else(|| Error::Scoring(format!("session has no embedding for {path}")))?;
            let mut vecs = Vec::new();
            let mut res = Vec::new();
            for id in &cluster.leaves {
                let el = library
                    .elements
                    .get(id)
                    .ok_or_else(|| Error::Scoring(format!("unknown element {id}")))?;
                let e = el
                    .visual_embedding
                    .as_ref()
                    .ok_or_else(|| Error::Scoring(format!("element {id} has no embedding")))?;
                vecs.push(e.0.clone());
                res.push(el.resolution as f64);
            }
            let n = vecs.len();
            let rmin = res.iter().cloned().fold(f64::INFINITY, f64::min);
            let rmax = res.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                let mut s_div = 0.0;
                if n > 1 {
                    for j in 0..n {
                        if j != i {
                            let ncos = (cos(&vecs[i], &vecs[j]) + 1.0) / 2.0;
                            s_div += (1.0 - ncos + dist(&vecs[i], &vecs[j])) / 2.0;
                        }
                    }
                    s_div /= (n - 1) as f64;
                }
                let s_cns = (cos(&text.0, &vecs[i]) + 1.0) / 2.0;
                let s_res = if rmax == rmin {
                    1.0
                } else {
                    (res[i] - rmin) / (rmax - rmin)
                };
                let s_total = cfg.w_div * s_div + cfg.w_cns * s_cns + cfg.w_res * s_res;
                let expected = ScoreRecord {
                    s_div,
                    s_cns,
                    s_res,
                    s_total,
                    height: h0 + s_total * k,
                };
                let id = &cluster.leaves[i];
                let Some(stored) = session.hierarchy.scores.get(id) else {
                    report.diffs.push(OracleDiff {
                        element_id: id.clone(),
                        field: "missing".into(),
                        stored: f64::NAN,
                        recomputed: s_total,
                    });
                    continue;
                };
                report.checked += 1;
                for (field, a, b) in [
                    ("s_div", stored.s_div, expected.s_div),
                    ("s_cns", stored.s_cns, expected.s_cns),
                    ("s_res", stored.s_res, expected.s_res),
                    ("s_total", stored.s_total, expected.s_total),
                    ("height", stored.height, expected.height),
                ] {
                    let d = (a - b).abs();
                    report.max_abs_diff = report.max_abs_diff.max(d);
                    if !(d <= tolerance) {
                        report.diffs.push(OracleDiff {
                            element_id: id.clone(),
                            field: field.into(),
                            stored: a,
                            recomputed: b,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}
