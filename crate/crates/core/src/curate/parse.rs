//! Schema checks and validation for the model's curation replies.
//!
//! Each `parse_*` function either accepts a reply (possibly dropping or
//! repairing content, with warnings) or rejects it with a message that is
//! fed back to the model on the next attempt.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::backend::LlmStructuredResult;
use crate::model::{normalize_label, CategoryVocabulary, Cluster, LabelSelection, Role};

pub const OTHER_CLUSTER: &str = "other";

fn document(reply: &LlmStructuredResult) -> Result<&Value, String> {
    reply
        .parsed_json
        .as_ref()
        .ok_or_else(|| "reply does not contain a JSON document".to_string())
}

/// Object entries in the order their keys first appear in the raw text.
fn ordered<'a>(map: &'a serde_json::Map<String, Value>, raw: &str) -> Vec<(&'a String, &'a Value)> {
    let mut entries: Vec<_> = map.iter().collect();
    entries.sort_by_key(|(k, _)| {
        let quoted = serde_json::to_string(k).unwrap_or_default();
        raw.find(&quoted).unwrap_or(usize::MAX)
    });
    entries
}

fn string_list(v: &Value, what: &str) -> Result<Vec<String>, String> {
    let items = v
        .as_array()
        .ok_or_else(|| format!("`{what}` must be a list of label strings"))?;
    items
        .iter()
        .map(|item| {
            item.as_str()
                .map(normalize_label)
                .ok_or_else(|| format!("`{what}` contains a non-string item {item}"))
        })
        .collect()
}

fn find_key<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| names.contains(&normalize_label(k).as_str()))
        .map(|(_, v)| v)
}

/// Keeps labels that exist in `available`, removing duplicates; reports the rest.
fn keep_available(
    labels: Vec<String>,
    available: &BTreeSet<String>,
    seen: &mut BTreeSet<String>,
    warnings: &mut Vec<String>,
) -> Vec<String> {
    let mut out = Vec::new();
    for l in labels {
        if !available.contains(&l) {
            warnings.push(format!("dropped label `{l}`: not in the library"));
        } else if !seen.insert(l.clone()) {
            warnings.push(format!("ignored repeated label `{l}`"));
        } else {
            out.push(l);
        }
    }
    out
}

/// Full-mode selection: `{"central": [...], "related": [...]}`.
pub fn parse_selection(
    reply: &LlmStructuredResult,
    available: &BTreeSet<String>,
    warnings: &mut Vec<String>,
) -> Result<LabelSelection, String> {
    let obj = document(reply)?
        .as_object()
        .ok_or("selection must be a JSON object with `central` and `related` lists")?;
    let central = find_key(obj, &["central", "direct", "direct labels"])
        .ok_or("selection is missing the `central` list")?;
    let central = string_list(central, "central")?;
    let related = match find_key(obj, &["related", "related labels"]) {
        Some(v) => string_list(v, "related")?,
        None => Vec::new(),
    };
    let mut seen = BTreeSet::new();
    Ok(LabelSelection {
        central: keep_available(central, available, &mut seen, warnings),
        related: keep_available(related, available, &mut seen, warnings),
    })
}

/// Keyword-only selection: a list, or `{"labels": [...]}`.
pub fn parse_keywords(
    reply: &LlmStructuredResult,
    available: &BTreeSet<String>,
    warnings: &mut Vec<String>,
) -> Result<LabelSelection, String> {
    let doc = document(reply)?;
    let labels = match doc {
        Value::Array(_) => string_list(doc, "labels")?,
        Value::Object(obj) => {
            let v = find_key(obj, &["labels", "central", "direct labels"])
                .ok_or("keyword reply is missing the `labels` list")?;
            string_list(v, "labels")?
        }
        _ => return Err("keyword reply must be a list of labels".into()),
    };
    let mut seen = BTreeSet::new();
    Ok(LabelSelection {
        central: keep_available(labels, available, &mut seen, warnings),
        related: Vec::new(),
    })
}

/// Category assignment for the selected labels as the model wrote it.
/// Labels outside `selected` are dropped; a label listed twice keeps its
/// first category. Omitted labels are left for the caller's fallback.
pub fn parse_classification(
    reply: &LlmStructuredResult,
    selected: &[String],
    vocabulary: &CategoryVocabulary,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, Role>, String> {
    let obj = document(reply)?
        .as_object()
        .ok_or("classification must be a JSON object keyed by category")?;
    let mut recognized = 0;
    let mut out = BTreeMap::new();
    for (key, value) in ordered(obj, &reply.raw_text) {
        let Some(role) = vocabulary.resolve(key) else {
            warnings.push(format!("ignored unknown category `{key}`"));
            continue;
        };
        recognized += 1;
        for label in string_list(value, key)? {
            if !selected.contains(&label) {
                warnings.push(format!("dropped label `{label}`: not selected"));
            } else if let Some(first) = out.get(&label) {
                if *first != role {
                    warnings.push(format!("label `{label}` classified twice; kept {first:?}"));
                }
            } else {
                out.insert(label, role);
            }
        }
    }
    if recognized == 0 {
        return Err("classification names none of the three categories".into());
    }
    Ok(out)
}

struct TreeBuilder<'a> {
    allowed: &'a [String],
    seen: BTreeSet<String>,
    max_depth: usize,
    raw: &'a str,
    warnings: &'a mut Vec<String>,
}

impl TreeBuilder<'_> {
    fn add_label(&mut self, into: &mut Cluster, label: &str) {
        let label = normalize_label(label);
        if !self.allowed.contains(&label) {
            self.warnings.push(format!("dropped label `{label}`: not in this category"));
        } else if !self.seen.insert(label.clone()) {
            self.warnings.push(format!("ignored repeated label `{label}`"));
        } else {
            into.leaves.push(label);
        }
    }

    /// Adds the content of `value` into `into`, which sits at `depth`.
    fn fill(&mut self, into: &mut Cluster, value: &Value, depth: usize) -> Result<(), String> {
        match value {
            Value::String(s) => self.add_label(into, s),
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::String(s) => self.add_label(into, s),
                        Value::Object(_) => self.fill(into, item, depth)?,
                        other => return Err(format!("cluster `{}` contains {other}", into.name)),
                    }
                }
            }
            Value::Object(map) => {
                for (key, child_value) in ordered(map, self.raw) {
                    let name = key.trim();
                    if name.is_empty() {
                        return Err(format!("cluster under `{}` has an empty name", into.name));
                    }
                    if depth >= self.max_depth {
                        self.fill(into, child_value, depth)?;
                        continue;
                    }
                    let idx = match into.children.iter().position(|c| c.name == name) {
                        Some(i) => i,
                        None => {
                            into.children.push(Cluster::named(name));
                            into.children.len() - 1
                        }
                    };
                    let mut child = std::mem::take(&mut into.children[idx]);
                    self.fill(&mut child, child_value, depth + 1)?;
                    into.children[idx] = child;
                }
                into.children
                    .retain(|c| !c.leaves.is_empty() || !c.children.is_empty());
            }
            other => return Err(format!("cluster `{}` has value {other}", into.name)),
        }
        Ok(())
    }
}

/// Builds a label tree for one category. Leaves are labels; every label in
/// `labels` appears exactly once, omissions landing in an `other` cluster.
pub fn parse_clusters(
    reply: &LlmStructuredResult,
    root_name: &str,
    role: Role,
    labels: &[String],
    vocabulary: &CategoryVocabulary,
    max_depth: usize,
    warnings: &mut Vec<String>,
) -> Result<Cluster, String> {
    let doc = document(reply)?;
    let body = match doc {
        Value::Object(obj) => {
            let matching = obj.iter().find(|(k, _)| vocabulary.resolve(k) == Some(role));
            match (matching, obj.len()) {
                (Some((_, v)), _) => v,
                (None, 1) => obj.values().next().unwrap_or(doc),
                (None, _) => doc,
            }
        }
        Value::Array(_) => doc,
        _ => return Err("clustering must be a JSON object keyed by the category".into()),
    };
    let mut root = Cluster::named(root_name);
    let mut builder = TreeBuilder {
        allowed: labels,
        seen: BTreeSet::new(),
        max_depth,
        raw: &reply.raw_text,
        warnings,
    };
    builder.fill(&mut root, body, 0)?;
    let missing: Vec<String> = labels
        .iter()
        .filter(|l| !builder.seen.contains(*l))
        .cloned()
        .collect();
    if !missing.is_empty() {
        warnings_push(builder.warnings, &missing);
        if root.children.is_empty() {
            root.leaves.extend(missing);
        } else {
            let idx = match root.children.iter().position(|c| c.name == OTHER_CLUSTER) {
                Some(i) => i,
                None => {
                    root.children.push(Cluster::named(OTHER_CLUSTER));
                    root.children.len() - 1
                }
            };
            root.children[idx].leaves.extend(missing);
        }
    }
    Ok(root)
}

fn warnings_push(warnings: &mut Vec<String>, missing: &[String]) {
    warnings.push(format!(
        "clustering omitted {}; placed under `{OTHER_CLUSTER}`",
        missing.join(", ")
    ));
}

/// The flat tree used when clustering cannot be parsed.
pub fn flat_cluster(root_name: &str, labels: &[String]) -> Cluster {
    let mut root = Cluster::named(root_name);
    root.leaves = labels.to_vec();
    root
}
