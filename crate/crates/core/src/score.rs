//! Stage III scoring: diversity, consistency, resolution, combined score
//! and display height, plus score-equality dedup.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    AssetHierarchy, Cluster, ElementId, ElementLibrary, Embedding, Role, ScoreRecord,
    ScoringConfig, path_key,
};

/// Scores closer than this count as equal for dedup.
pub const DEDUP_TOLERANCE: f64 = 1e-12;

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Scoring(format!(
            "embedding dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cosine similarity mapped from [-1, 1] onto [0, 1].
pub fn normalized_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Scoring("zero-length embedding".into()));
    }
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok((cos + 1.0) / 2.0)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over the other cluster members of `(1 - ncos + d) / 2`; 0 for a
/// singleton cluster.
pub fn score_diversity(index: usize, cluster: &[&[f64]]) -> Result<f64> {
    let ei = cluster
        .get(index)
        .ok_or_else(|| Error::Scoring(format!("element index {index} outside cluster")))?;
    if cluster.len() < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (j, ej) in cluster.iter().enumerate() {
        if j == index {
            continue;
        }
        let ncos = normalized_cosine(ei, ej)?;
        sum += (1.0 - ncos + euclidean(ei, ej)) / 2.0;
    }
    Ok(sum / (cluster.len() - 1) as f64)
}

/// Normalized cosine between the element and its cluster-name embedding.
pub fn score_consistency(element: &[f64], cluster_text: &[f64]) -> Result<f64> {
    normalized_cosine(element, cluster_text)
}

/// Min-max normalized resolution within the cluster; 1 when all are equal.
pub fn score_resolution(resolution: u64, cluster: &[u64]) -> f64 {
    let min = cluster.iter().copied().min().unwrap_or(resolution);
    let max = cluster.iter().copied().max().unwrap_or(resolution);
    if max == min {
        1.0
    } else {
        (resolution as f64 - min as f64) / (max as f64 - min as f64)
    }
}

pub fn combine_score(s_div: f64, s_cns: f64, s_res: f64, config: &ScoringConfig) -> f64 {
    config.w_div * s_div + config.w_cns * s_cns + config.w_res * s_res
}

pub fn compute_height(s_total: f64, role: Role, config: &ScoringConfig) -> f64 {
    config.base_height(role) + s_total * config.scale(role)
}

/// One cluster member as seen by the scorer.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub id: &'a str,
    pub embedding: &'a [f64],
    pub resolution: u64,
}

/// Scores every member of one cluster.
pub fn score_cluster(
    members: &[Member<'_>],
    cluster_text: &[f64],
    role: Role,
    config: &ScoringConfig,
) -> Result<Vec<ScoreRecord>> {
    let vectors: Vec<&[f64]> = members.iter().map(|m| m.embedding).collect();
    let resolutions: Vec<u64> = members.iter().map(|m| m.resolution).collect();
    (0..members.len())
        .map(|i| {
            let s_div = score_diversity(i, &vectors)?;
            let s_cns = score_consistency(members[i].embedding, cluster_text)?;
            let s_res = score_resolution(members[i].resolution, &resolutions);
            let s_total = combine_score(s_div, s_cns, s_res, config);
            Ok(ScoreRecord {
                s_div,
                s_cns,
                s_res,
                s_total,
                height: compute_height(s_total, role, config),
            })
        })
        .collect()
}

/// Ids to suppress so that each group of equal scores keeps only its
/// smallest id. Groups chain through neighbours within the tolerance.
pub fn dedup_by_score(scores: &[(&str, f64)]) -> BTreeSet<ElementId> {
    let mut sorted: Vec<(&str, f64)> = scores.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    let mut suppressed = BTreeSet::new();
    let mut group: Vec<&str> = Vec::new();
    let mut last = f64::NAN;
    let flush = |group: &mut Vec<&str>, out: &mut BTreeSet<ElementId>| {
        if let Some(keep) = group.iter().min().copied() {
            out.extend(group.iter().filter(|id| **id != keep).map(|s| s.to_string()));
        }
        group.clear();
    };
    for (id, s) in sorted {
        if !group.is_empty() && (s - last).abs() > DEDUP_TOLERANCE {
            flush(&mut group, &mut suppressed);
        }
        group.push(id);
        last = s;
    }
    flush(&mut group, &mut suppressed);
    suppressed
}

/// Clusters that directly own leaves, with their path key and role.
pub fn scored_clusters(hierarchy: &AssetHierarchy) -> Vec<(Role, String, &Cluster)> {
    let mut out = Vec::new();
    for role in Role::ALL {
        hierarchy.category(role).walk(&mut Vec::new(), &mut |path, c| {
            if !c.leaves.is_empty() {
                out.push((role, path_key(path), c));
            }
        });
    }
    out
}

/// Scores every leaf against its owning cluster and recomputes the
/// suppressed set. `cluster_text` maps cluster path to the text embedding
/// of the cluster's name.
pub fn score_hierarchy(
    hierarchy: &mut AssetHierarchy,
    library: &ElementLibrary,
    cluster_text: &BTreeMap<String, Embedding>,
    config: &ScoringConfig,
) -> Result<()> {
    config.check()?;
    let clusters = scored_clusters(hierarchy);
    let results: Vec<Result<(Vec<(ElementId, ScoreRecord)>, BTreeSet<ElementId>)>> = clusters
        .par_iter()
        .map(|(role, path, cluster)| {
            let text = cluster_text
                .get(path)
                .ok_or_else(|| Error::Scoring(format!("no text embedding for cluster {path}")))?;
            let mut members = Vec::with_capacity(cluster.leaves.len());
            for id in &cluster.leaves {
                let el = library
                    .elements
                    .get(id)
                    .ok_or_else(|| Error::Scoring(format!("unknown element {id}")))?;
                let emb = el
                    .visual_embedding
                    .as_ref()
                    .ok_or_else(|| Error::Scoring(format!("element {id} has no embedding")))?;
                members.push(Member {
                    id,
                    embedding: emb.as_slice(),
                    resolution: el.resolution,
                });
            }
            let records = score_cluster(&members, text.as_slice(), *role, config)?;
            let totals: Vec<(&str, f64)> = members
                .iter()
                .zip(&records)
                .map(|(m, r)| (m.id, r.s_total))
                .collect();
            let suppressed = dedup_by_score(&totals);
            Ok((
                members
                    .iter()
                    .map(|m| m.id.to_string())
                    .zip(records)
                    .collect(),
                suppressed,
            ))
        })
        .collect();
    let mut scores = BTreeMap::new();
    let mut suppressed = BTreeSet::new();
    for r in results {
        let (recs, sup) = r?;
        scores.extend(recs);
        suppressed.extend(sup);
    }
    hierarchy.scores = scores;
    hierarchy.suppressed = suppressed;
    Ok(())
}
