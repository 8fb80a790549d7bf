//! Rule engine behind the mock LLM.
//!
//! A small knowledge table (word -> related labels, label -> role, label ->
//! cluster group) answers the selection, classification and clustering
//! prompts deterministically.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use crate::model::normalize_label;

/// Words that pull related labels into a selection.
const RELATED: &[(&str, &[&str])] = &[
    ("sunny", &["sky", "sun", "cloud", "sunglasses"]),
    ("park", &["grass", "tree", "flower"]),
    ("dog", &["frisbee", "ball"]),
    ("garden", &["tree", "flower", "butterfly", "sky", "grass"]),
    ("beach", &["sand", "ocean", "sun", "umbrella", "sunglasses"]),
    ("night", &["moon", "stars"]),
    ("street", &["car", "building", "sidewalk", "road"]),
    ("city", &["building", "car", "bus", "street"]),
    ("space", &["moon", "stars", "planet", "spaceship"]),
    ("rocket", &["space", "stars", "moon"]),
    ("astronaut", &["spaceship", "space", "moon"]),
    ("lake", &["boat", "tree", "mountain"]),
    ("river", &["boat", "tree", "bridge"]),
    ("rain", &["umbrella", "cloud"]),
    ("playground", &["swing", "slide", "ball"]),
    ("mountain", &["sky", "cloud", "tree"]),
    ("picnic", &["blanket", "basket", "grass", "tree"]),
    ("cat", &["ball"]),
    ("stadium", &["ball", "crowd", "flag"]),
];

/// Fallback picks when a story noun has no exact label.
const SUBSTITUTES: &[(&str, &[&str])] = &[
    ("boy", &["man", "child", "kid", "person"]),
    ("girl", &["woman", "child", "kid", "person"]),
    ("man", &["person", "boy"]),
    ("woman", &["person", "girl"]),
    ("child", &["boy", "girl", "kid"]),
    ("kid", &["child", "boy", "girl"]),
    ("dog", &["puppy", "animal"]),
    ("puppy", &["dog"]),
    ("cat", &["kitten", "animal"]),
    ("car", &["vehicle", "taxi"]),
    ("ship", &["boat"]),
    ("boat", &["ship"]),
    ("spaceship", &["rocket", "spacecraft"]),
    ("rocket", &["spaceship", "spacecraft"]),
];

const LIVING: &[&str] = &[
    "boy", "girl", "woman", "man", "person", "people", "child", "kid", "baby", "dog", "puppy",
    "cat", "kitten", "bird", "horse", "cow", "sheep", "animal", "astronaut", "athlete", "player",
    "crowd", "fish", "duck", "lion", "tiger", "elephant",
];

const SCENERY: &[&str] = &[
    "park", "sky", "beach", "ocean", "sea", "mountain", "street", "city", "forest", "field",
    "lake", "river", "space", "desert", "garden", "stadium", "playground", "road", "landscape",
    "night sky", "galaxy",
];

/// Living or large things the classifier still treats as accessories.
const ACCESSORY_OVERRIDES: &[&str] = &[
    "sun", "cloud", "grass", "tree", "flower", "butterfly", "moon", "stars", "star",
];

const GROUPS: &[(&str, &[&str])] = &[
    ("dog toy", &["frisbee", "ball", "bone"]),
    ("human belongings", &["sunglasses", "hat", "umbrella", "bag", "skirt", "blanket", "basket"]),
    ("environment", &["sun", "cloud", "moon", "stars", "star", "rain", "planet"]),
    ("plant", &["grass", "tree", "flower", "bush", "leaf"]),
    ("vehicle", &["car", "bus", "train", "airplane", "helicopter", "boat", "ship", "bicycle", "spaceship"]),
    ("architecture", &["building", "house", "bridge", "bank", "tower"]),
    ("park furniture", &["bench", "swing", "slide", "kite"]),
    ("people", &["boy", "girl", "woman", "man", "person", "child", "kid", "crowd"]),
    ("animal", &["dog", "puppy", "cat", "bird", "horse", "butterfly"]),
];

const SUPERGROUPS: &[(&str, &[&str])] = &[
    ("nature", &["environment", "plant"]),
    ("personal items", &["dog toy", "human belongings"]),
    ("urban", &["vehicle", "architecture", "park furniture"]),
    ("living beings", &["people", "animal"]),
];

const SELECTOR_MARKER: &str = "You are a selector of visual assets";
const KEYWORD_MARKER: &str = "You are an assistant for visual assets preparation";
const CLASSIFIER_MARKER: &str = "You are a classifier of visual assets";
const CLUSTER_MARKER: &str = "You are a cluster of visual assets";
const AVAILABLE_MARKER: &str = "The visual assets available are:";

/// Answers one prompt, returning the raw completion text.
pub(crate) fn complete(system_prompt: &str, payload: &str) -> String {
    let reply = if system_prompt.contains(SELECTOR_MARKER) {
        let available = available_labels(system_prompt);
        let (central, related) = select(payload, &available, true);
        json!({ "central": central, "related": related })
    } else if system_prompt.contains(KEYWORD_MARKER) {
        let available = available_labels(system_prompt);
        let (central, _) = select(payload, &available, false);
        json!({ "labels": central })
    } else if system_prompt.contains(CLASSIFIER_MARKER) {
        classify(&payload_labels(payload))
    } else if system_prompt.contains(CLUSTER_MARKER) {
        match payload_category(payload) {
            Some((category, labels)) => cluster(&category, &labels),
            None => return "I could not find any labels to cluster.".into(),
        }
    } else {
        return "I am not sure what task this is.".into();
    };
    reply.to_string()
}

fn available_labels(system_prompt: &str) -> Vec<String> {
    system_prompt
        .lines()
        .find_map(|line| line.split_once(AVAILABLE_MARKER).map(|(_, rest)| rest))
        .map(split_list)
        .unwrap_or_default()
}

fn split_list(text: &str) -> Vec<String> {
    text.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(normalize_label)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Labels from "- Direct labels: a, b" / "- Related labels: c" lines.
fn payload_labels(payload: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in payload.lines() {
        if let Some((_, rest)) = line.split_once(':') {
            for l in split_list(rest) {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
        }
    }
    out
}

/// The "- Category: [labels]" line of a clustering payload.
fn payload_category(payload: &str) -> Option<(String, Vec<String>)> {
    payload.lines().find_map(|line| {
        let line = line.trim().trim_start_matches('-').trim();
        let (name, rest) = line.split_once(':')?;
        let labels = split_list(rest);
        (!labels.is_empty()).then(|| (name.trim().to_string(), labels))
    })
}

fn singular(word: &str) -> String {
    if word.len() > 4 {
        if let Some(stem) = word.strip_suffix("ies") {
            return format!("{stem}y");
        }
        for suffix in ["ches", "shes", "sses", "xes"] {
            if let Some(stem) = word.strip_suffix(suffix) {
                return format!("{stem}{}", &suffix[..suffix.len() - 2]);
            }
        }
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(singular)
        .collect()
}

/// First token position where `label` occurs in the story.
fn mention(story: &[String], label: &str) -> Option<usize> {
    let words = tokens(label);
    if words.is_empty() || words.len() > story.len() {
        return None;
    }
    story.windows(words.len()).position(|w| w == words.as_slice())
}

fn table<'a>(t: &'a [(&str, &'a [&'a str])], key: &str) -> &'a [&'a str] {
    t.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .unwrap_or(&[])
}

fn select(story: &str, available: &[String], with_related: bool) -> (Vec<String>, Vec<String>) {
    let story_tokens = tokens(story);
    let mut hits: Vec<(usize, String)> = available
        .iter()
        .filter_map(|l| mention(&story_tokens, l).map(|p| (p, l.clone())))
        .collect();
    if with_related {
        // Nouns in the story with no exact label fall back to a substitute.
        for (pos, tok) in story_tokens.iter().enumerate() {
            if available.contains(tok) || hits.iter().any(|(_, l)| l == tok) {
                continue;
            }
            if let Some(sub) = table(SUBSTITUTES, tok)
                .iter()
                .find(|s| available.iter().any(|a| a == *s))
            {
                if !hits.iter().any(|(_, l)| l == sub) {
                    hits.push((pos, sub.to_string()));
                }
            }
        }
    }
    hits.sort();
    let mut central: Vec<String> = Vec::new();
    for (_, l) in hits {
        if !central.contains(&l) {
            central.push(l);
        }
    }
    if !with_related {
        return (central, Vec::new());
    }
    let mut related: Vec<String> = Vec::new();
    let cues = story_tokens
        .iter()
        .filter(|t| !central.contains(t))
        .chain(central.iter());
    for cue in cues {
        for r in table(RELATED, cue) {
            let r = r.to_string();
            if available.contains(&r) && !central.contains(&r) && !related.contains(&r) {
                related.push(r);
            }
        }
    }
    (central, related)
}

fn role_of(label: &str) -> &'static str {
    if ACCESSORY_OVERRIDES.contains(&label) {
        "Accessories"
    } else if LIVING.contains(&label) {
        "Character"
    } else if SCENERY.contains(&label) {
        "Background"
    } else {
        "Accessories"
    }
}

fn classify(labels: &[String]) -> Value {
    let mut out = Map::new();
    for key in ["Character", "Accessories", "Background"] {
        let members: Vec<&String> = labels.iter().filter(|l| role_of(l) == key).collect();
        out.insert(key.to_string(), json!(members));
    }
    Value::Object(out)
}

fn group_of(label: &str) -> Option<&'static str> {
    GROUPS
        .iter()
        .find(|(_, members)| members.contains(&label))
        .map(|(g, _)| *g)
}

fn cluster(category: &str, labels: &[String]) -> Value {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for label in labels {
        let g = group_of(label).unwrap_or("miscellaneous").to_string();
        match groups.iter_mut().find(|(name, _)| *name == g) {
            Some((_, members)) => members.push(label.clone()),
            None => groups.push((g, vec![label.clone()])),
        }
    }
    let grouped = groups.iter().filter(|(g, _)| g != "miscellaneous").count();
    let body = if labels.len() < 3 || groups.len() < 2 || grouped == 0 {
        json!(labels)
    } else if groups.len() > 4 {
        nest(groups)
    } else {
        flat_groups(&groups)
    };
    let mut out = Map::new();
    out.insert(category.to_string(), body);
    Value::Object(out)
}

fn flat_groups(groups: &[(String, Vec<String>)]) -> Value {
    let mut m = Map::new();
    for (g, members) in groups {
        m.insert(g.clone(), json!(members));
    }
    Value::Object(m)
}

/// Groups sub-clusters under a super-group when that shortens the level.
fn nest(groups: Vec<(String, Vec<String>)>) -> Value {
    let mut top: Vec<(String, Vec<(String, Vec<String>)>)> = Vec::new();
    let mut loose: Vec<(String, Vec<String>)> = Vec::new();
    for (g, members) in groups {
        let parent = SUPERGROUPS
            .iter()
            .find(|(_, subs)| subs.contains(&g.as_str()))
            .map(|(p, _)| p.to_string());
        match parent {
            Some(p) => match top.iter_mut().find(|(name, _)| *name == p) {
                Some((_, subs)) => subs.push((g, members)),
                None => top.push((p, vec![(g, members)])),
            },
            None => loose.push((g, members)),
        }
    }
    let mut m = Map::new();
    for (p, subs) in top {
        if subs.len() == 1 {
            let (g, members) = subs.into_iter().next().unwrap_or_default();
            m.insert(g, json!(members));
        } else {
            m.insert(p, flat_groups(&subs));
        }
    }
    for (g, members) in loose {
        m.insert(g, json!(members));
    }
    Value::Object(m)
}

/// Distinct labels across all tables; used to seed synthetic tagging.
pub(crate) fn vocabulary() -> BTreeSet<&'static str> {
    let mut v = BTreeSet::new();
    for (_, members) in GROUPS {
        v.extend(members.iter().copied());
    }
    v.extend(SCENERY.iter().copied().filter(|s| !s.contains(' ')));
    v
}

pub(crate) fn is_scenery(label: &str) -> bool {
    SCENERY.contains(&label)
}

pub(crate) fn is_living(label: &str) -> bool {
    LIVING.contains(&label)
}
