//! Stage II: story-driven label selection, role classification, layered
//! clustering and character parsing, followed by scoring.

pub mod parse;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendError, LlmStructuredResult};
use crate::error::{Error, Result, Stage};
use crate::json;
use crate::model::{
    AssetHierarchy, CategoryVocabulary, CharacterRig, Cluster, ElementId,
    ElementLibrary, Embedding, LabelCategory, LabelSelection, Role, ScoringConfig, SelectionMode,
};
use crate::score;

pub const SESSION_FILE: &str = "session.json";
pub const LIBRARY_REF_FILE: &str = "library.ref";
pub const PARTS_DIR: &str = "parts";
pub const MAX_STORY_CHARS: usize = 2000;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateConfig {
    pub mode: SelectionMode,
    pub scoring: ScoringConfig,
    pub vocabulary: CategoryVocabulary,
    pub max_depth: usize,
    /// Re-asks allowed per LLM stage after the first call.
    pub retries: u32,
    pub parse_characters: bool,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            mode: SelectionMode::Full,
            scoring: ScoringConfig::default(),
            vocabulary: CategoryVocabulary::default(),
            max_depth: DEFAULT_MAX_DEPTH,
            retries: DEFAULT_RETRIES,
            parse_characters: true,
        }
    }
}

/// LLM calls made per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAttempts {
    pub select: u32,
    pub classify: u32,
    pub cluster: u32,
}

impl StageAttempts {
    pub fn total(&self) -> u32 {
        self.select + self.classify + self.cluster
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSession {
    pub session_id: String,
    pub library_id: String,
    pub story: String,
    pub mode: SelectionMode,
    pub selection: LabelSelection,
    pub classification: BTreeMap<String, Role>,
    /// Label to the path of the cluster node holding its elements.
    pub label_clusters: BTreeMap<String, String>,
    pub hierarchy: AssetHierarchy,
    pub vocabulary: CategoryVocabulary,
    pub scoring: ScoringConfig,
    pub max_depth: usize,
    pub retries: u32,
    /// Total LLM calls across the three stages.
    pub prompt_attempts: u32,
    pub attempts: StageAttempts,
    /// Character rigs; mask paths are relative to the session directory.
    #[serde(default)]
    pub rigs: BTreeMap<ElementId, CharacterRig>,
    /// Text embedding of each scored cluster's name, keyed by cluster path.
    #[serde(default)]
    pub cluster_embeddings: BTreeMap<String, Embedding>,
    pub insufficient_assets: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CurationSession {
    pub fn save(&self, dir: &Path, library_dir: &Path) -> Result<()> {
        json::write_file(&dir.join(SESSION_FILE), self)?;
        let abs = std::path::absolute(library_dir).map_err(|e| Error::io(library_dir, e))?;
        let ref_path = dir.join(LIBRARY_REF_FILE);
        std::fs::write(&ref_path, format!("{}\n", abs.display())).map_err(|e| Error::io(&ref_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        json::read_file(&dir.join(SESSION_FILE))
    }

    /// Library directory recorded next to the session.
    pub fn library_dir(dir: &Path) -> Result<PathBuf> {
        let ref_path = dir.join(LIBRARY_REF_FILE);
        let text = std::fs::read_to_string(&ref_path).map_err(|e| Error::io(&ref_path, e))?;
        Ok(PathBuf::from(text.trim()))
    }

    /// Elements selected for the story (every hierarchy leaf).
    pub fn selected_elements(&self) -> BTreeSet<ElementId> {
        self.hierarchy.leaves().into_iter().cloned().collect()
    }

    /// Role each selected element ended up under.
    pub fn roles(&self) -> BTreeMap<ElementId, Role> {
        self.hierarchy
            .placement_map()
            .into_iter()
            .map(|(id, (role, _))| (id, role))
            .collect()
    }
}

pub fn check_story(story: &str) -> Result<()> {
    if story.trim().is_empty() {
        return Err(Error::Invalid("story must not be empty".into()));
    }
    let n = story.chars().count();
    if n > MAX_STORY_CHARS {
        return Err(Error::Invalid(format!(
            "story has {n} characters; the limit is {MAX_STORY_CHARS}"
        )));
    }
    Ok(())
}

/// Outcome of a bounded ask/repair loop.
pub struct Asked<T> {
    pub value: Option<T>,
    pub attempts: u32,
    pub last_raw: String,
    pub last_error: String,
}

/// Calls the model up to `1 + retries` times until `parse` accepts a reply.
/// Each repair attempt carries the previous parse error in the system prompt.
pub fn ask<T>(
    backend: &dyn Backend,
    stage: Stage,
    system: &str,
    payload: &str,
    retries: u32,
    mut parse: impl FnMut(&LlmStructuredResult) -> std::result::Result<T, String>,
) -> Result<Asked<T>> {
    let mut prompt = system.to_string();
    let mut asked = Asked {
        value: None,
        attempts: 0,
        last_raw: String::new(),
        last_error: String::new(),
    };
    while asked.attempts <= retries {
        asked.attempts += 1;
        let reply = backend
            .llm_complete(&prompt, payload)
            .map_err(|e| Error::backend(stage, e))?;
        match parse(&reply) {
            Ok(v) => {
                asked.value = Some(v);
                break;
            }
            Err(msg) => {
                log::warn!("{stage} reply rejected (attempt {}): {msg}", asked.attempts);
                prompt = prompts::repair_prompt(system, &msg);
                asked.last_error = msg;
                asked.last_raw = reply.raw_text;
            }
        }
    }
    Ok(asked)
}

fn exhausted<T>(stage: Stage, asked: Asked<T>) -> Error {
    Error::Curation {
        stage,
        message: format!(
            "no valid reply after {} attempts: {}",
            asked.attempts, asked.last_error
        ),
        raw: Some(asked.last_raw),
    }
}

/// Picks story labels from `available`. Keyword mode returns central labels only.
pub fn select_labels(
    story: &str,
    available: &[String],
    mode: SelectionMode,
    backend: &dyn Backend,
    retries: u32,
    warnings: &mut Vec<String>,
) -> Result<(LabelSelection, u32)> {
    if available.is_empty() {
        return Err(Error::Invalid("no labels available for selection".into()));
    }
    let set: BTreeSet<String> = available.iter().cloned().collect();
    let system = match mode {
        SelectionMode::Full => prompts::select_prompt(available),
        SelectionMode::KeywordOnly => prompts::keyword_prompt(available),
    };
    let mut stage_warnings = Vec::new();
    let asked = ask(backend, Stage::Select, &system, story, retries, |reply| {
        stage_warnings.clear();
        match mode {
            SelectionMode::Full => parse::parse_selection(reply, &set, &mut stage_warnings),
            SelectionMode::KeywordOnly => parse::parse_keywords(reply, &set, &mut stage_warnings),
        }
    })?;
    warnings.extend(stage_warnings);
    let attempts = asked.attempts;
    match asked.value {
        Some(sel) => Ok((sel, attempts)),
        None => Err(exhausted(Stage::Select, asked)),
    }
}

/// The rule used for labels the classifier leaves out.
pub fn fallback_role(label: &str, category: Option<LabelCategory>) -> Role {
    if category == Some(LabelCategory::Scene) {
        Role::Background
    } else if crate::backend::mock::is_living(label) {
        Role::Character
    } else {
        Role::Accessory
    }
}

/// Assigns each selected label one role.
pub fn classify_roles(
    selection: &LabelSelection,
    categories: &BTreeMap<String, LabelCategory>,
    vocabulary: &CategoryVocabulary,
    backend: &dyn Backend,
    retries: u32,
    warnings: &mut Vec<String>,
) -> Result<(BTreeMap<String, Role>, u32)> {
    let selected: Vec<String> = selection.all().cloned().collect();
    let mut stage_warnings = Vec::new();
    let asked = ask(
        backend,
        Stage::Classify,
        &prompts::classify_prompt(vocabulary),
        &prompts::classify_payload(selection),
        retries,
        |reply| {
            stage_warnings.clear();
            parse::parse_classification(reply, &selected, vocabulary, &mut stage_warnings)
        },
    )?;
    warnings.extend(stage_warnings);
    let attempts = asked.attempts;
    let Some(mut map) = asked.value else {
        return Err(exhausted(Stage::Classify, asked));
    };
    for label in &selected {
        if !map.contains_key(label) {
            let role = fallback_role(label, categories.get(label).copied());
            warnings.push(format!("classifier omitted `{label}`; assigned {role:?}"));
            map.insert(label.clone(), role);
        }
    }
    Ok((map, attempts))
}

/// Groups one category's labels into a named tree whose leaves are labels.
/// An unusable reply degrades to a flat tree.
pub fn cluster_labels(
    role: Role,
    labels: &[String],
    vocabulary: &CategoryVocabulary,
    backend: &dyn Backend,
    max_depth: usize,
    retries: u32,
    warnings: &mut Vec<String>,
) -> Result<(Cluster, u32)> {
    let root = vocabulary.name(role);
    if labels.is_empty() {
        return Ok((Cluster::named(root), 0));
    }
    let mut stage_warnings = Vec::new();
    let asked = ask(
        backend,
        Stage::Cluster,
        &prompts::cluster_prompt(vocabulary),
        &prompts::cluster_payload(&prompts::category_display(vocabulary, role), labels),
        retries,
        |reply| {
            stage_warnings.clear();
            parse::parse_clusters(reply, root, role, labels, vocabulary, max_depth, &mut stage_warnings)
        },
    )?;
    warnings.extend(stage_warnings);
    let attempts = asked.attempts;
    match asked.value {
        Some(tree) => Ok((tree, attempts)),
        None => {
            warnings.push(format!(
                "clustering {root} failed after {attempts} attempts ({}); using a flat cluster",
                asked.last_error
            ));
            Ok((parse::flat_cluster(root, labels), attempts))
        }
    }
}

/// Turns a label tree into an element tree: each label becomes a cluster
/// named after it holding its not-yet-claimed elements.
fn expand(
    label_tree: &Cluster,
    library: &ElementLibrary,
    path: &mut Vec<String>,
    claimed: &mut BTreeSet<ElementId>,
    label_clusters: &mut BTreeMap<String, String>,
) -> Cluster {
    path.push(label_tree.name.clone());
    let mut out = Cluster::named(&label_tree.name);
    for label in &label_tree.leaves {
        path.push(label.clone());
        let mut node = Cluster::named(label);
        for id in library.elements_for(label) {
            if claimed.insert(id.clone()) {
                node.leaves.push(id.clone());
            }
        }
        label_clusters.insert(label.clone(), path.join("/"));
        path.pop();
        out.children.push(node);
    }
    for child in &label_tree.children {
        let mut sub = child.clone();
        if out.children.iter().any(|c| c.name == sub.name) {
            sub.name = format!("{} group", sub.name);
        }
        out.children.push(expand(&sub, library, path, claimed, label_clusters));
    }
    path.pop();
    out
}

/// Runs the character parser over every element of the characters category.
/// Rigs are written under `out_dir/parts/<element_id>/`.
pub fn parse_characters(
    hierarchy: &AssetHierarchy,
    library: &ElementLibrary,
    backend: &dyn Backend,
    out_dir: &Path,
) -> (BTreeMap<ElementId, CharacterRig>, Vec<String>) {
    let ids: Vec<&ElementId> = hierarchy.category(Role::Character).leaves_dfs();
    let results: Vec<(ElementId, std::result::Result<CharacterRig, String>)> = ids
        .par_iter()
        .map(|id| {
            let r = (|| {
                let el = library
                    .elements
                    .get(*id)
                    .ok_or_else(|| format!("unknown element {id}"))?;
                let rel_dir = Path::new(PARTS_DIR).join(id.as_str());
                let parsed = backend
                    .parse_character(&library.cutout_file(el), &out_dir.join(&rel_dir))
                    .map_err(|e| match e {
                        BackendError::NoCharacter => format!("no character detected in {id}"),
                        other => format!("character parsing failed for {id}: {other}"),
                    })?;
                let mut rig = parsed.rig;
                for part in &mut rig.parts {
                    if let Some(rel) = pathdiff::diff_paths(&part.mask_path, out_dir) {
                        part.mask_path = rel;
                    }
                }
                Ok(rig)
            })();
            ((*id).clone(), r)
        })
        .collect();
    let mut rigs = BTreeMap::new();
    let mut warnings = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rig) => {
                rigs.insert(id, rig);
            }
            Err(msg) => warnings.push(msg),
        }
    }
    (rigs, warnings)
}

/// Embeds the name of every cluster that directly owns elements.
pub fn cluster_text_embeddings(
    hierarchy: &AssetHierarchy,
    backend: &dyn Backend,
) -> Result<BTreeMap<String, Embedding>> {
    let clusters = score::scored_clusters(hierarchy);
    let names: BTreeSet<&str> = clusters.iter().map(|(_, _, c)| c.name.as_str()).collect();
    let vectors: Vec<(String, Embedding)> = names
        .into_par_iter()
        .map(|name| {
            backend
                .embed_text(name)
                .map(|r| (name.to_string(), r.vector))
                .map_err(|e| Error::backend(Stage::Score, e))
        })
        .collect::<Result<_>>()?;
    let by_name: BTreeMap<String, Embedding> = vectors.into_iter().collect();
    Ok(clusters
        .into_iter()
        .filter_map(|(_, path, c)| by_name.get(&c.name).map(|v| (path, v.clone())))
        .collect())
}

fn session_id(library_id: &str, story: &str, config: &CurateConfig, backend: &str) -> String {
    let mut h = Sha256::new();
    h.update(library_id.as_bytes());
    h.update([0]);
    h.update(story.as_bytes());
    h.update([0]);
    h.update(json::to_canonical_string(config).unwrap_or_default().as_bytes());
    h.update(backend.as_bytes());
    format!("s-{}", hex::encode(&h.finalize()[..8]))
}

/// Runs selection, classification, clustering, character parsing and
/// scoring for `story` over `library`. Part masks go under `out_dir`.
pub fn curate(
    story: &str,
    library: &ElementLibrary,
    backend: &dyn Backend,
    config: &CurateConfig,
    out_dir: &Path,
) -> Result<CurationSession> {
    check_story(story)?;
    config.scoring.check()?;
    let report = library.validate();
    if !report.is_valid() {
        return Err(Error::Invalid(format!(
            "library {} has {} violations, first: {:?}",
            library.library_id,
            report.violations.len(),
            report.violations[0]
        )));
    }
    let mut warnings = Vec::new();
    let mut attempts = StageAttempts::default();
    let available = library.labels();
    let mut session = CurationSession {
        session_id: session_id(&library.library_id, story, config, &backend.name()),
        library_id: library.library_id.clone(),
        story: story.to_string(),
        mode: config.mode,
        selection: LabelSelection::default(),
        classification: BTreeMap::new(),
        label_clusters: BTreeMap::new(),
        hierarchy: AssetHierarchy::empty(&config.vocabulary),
        vocabulary: config.vocabulary.clone(),
        scoring: config.scoring.clone(),
        max_depth: config.max_depth,
        retries: config.retries,
        prompt_attempts: 0,
        attempts,
        rigs: BTreeMap::new(),
        cluster_embeddings: BTreeMap::new(),
        insufficient_assets: false,
        warnings: Vec::new(),
    };
    if available.is_empty() {
        session.insufficient_assets = true;
        session.warnings.push("library has no labels".into());
        return Ok(session);
    }

    let (selection, n) = select_labels(story, &available, config.mode, backend, config.retries, &mut warnings)?;
    attempts.select = n;
    session.selection = selection;
    if session.selection.is_empty() {
        session.insufficient_assets = true;
        warnings.push("no library label matches the story".into());
    } else {
        let (classification, n) = classify_roles(
            &session.selection,
            &library.label_categories,
            &config.vocabulary,
            backend,
            config.retries,
            &mut warnings,
        )?;
        attempts.classify = n;

        let mut claimed = BTreeSet::new();
        let mut label_clusters = BTreeMap::new();
        for role in Role::ALL {
            let labels: Vec<String> = session
                .selection
                .all()
                .filter(|l| classification.get(*l) == Some(&role))
                .cloned()
                .collect();
            let (tree, n) = cluster_labels(
                role,
                &labels,
                &config.vocabulary,
                backend,
                config.max_depth,
                config.retries,
                &mut warnings,
            )?;
            attempts.cluster += n;
            *session.hierarchy.category_mut(role) =
                expand(&tree, library, &mut Vec::new(), &mut claimed, &mut label_clusters);
        }
        session.classification = classification;
        session.label_clusters = label_clusters;

        if config.parse_characters {
            let (rigs, rig_warnings) = parse_characters(&session.hierarchy, library, backend, out_dir);
            session.rigs = rigs;
            warnings.extend(rig_warnings);
        }
        session.cluster_embeddings = cluster_text_embeddings(&session.hierarchy, backend)?;
        score::score_hierarchy(
            &mut session.hierarchy,
            library,
            &session.cluster_embeddings,
            &config.scoring,
        )?;
    }
    session.attempts = attempts;
    session.prompt_attempts = attempts.total();
    session.warnings = warnings;
    Ok(session)
}

/// Recomputes scores after a weight change without calling the model again.
pub fn rescore(session: &mut CurationSession, library: &ElementLibrary, scoring: ScoringConfig) -> Result<()> {
    score::score_hierarchy(&mut session.hierarchy, library, &session.cluster_embeddings, &scoring)?;
    session.scoring = scoring;
    Ok(())
}
