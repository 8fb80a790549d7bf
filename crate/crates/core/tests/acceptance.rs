//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances and budgets are pinned below.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use collage_forge::backend::{Backend, BackendDescriptor, MockBackend};
use collage_forge::curate::{self, CurateConfig};
use collage_forge::error::{Error, Stage};
use collage_forge::export;
use collage_forge::layout::{self, LayoutOptions};
use collage_forge::model::{
    AssetHierarchy, Canvas, CategoryVocabulary, Cluster, ElementLibrary, PresentMode, Role,
    ScoreRecord, ScoringConfig, SelectionMode,
};
use collage_forge::preprocess::PrepareOptions;
use collage_forge::scene::{self, SceneContext, SceneOp};
use collage_forge::score::{self, Member};
use collage_forge::{json, pipeline};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

const ORACLE_CLUSTERS: usize = 1000;
const ORACLE_MAX_CLUSTER: usize = 10;
const ORACLE_DIM: usize = 8;
const ORACLE_TOLERANCE: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);

const ORTHOGONAL_PAIR: f64 = 0.95711;
const ORTHOGONAL_TOLERANCE: f64 = 1e-5;
const COMBINE_TOLERANCE: f64 = 1e-12;

const FUZZ_CASES: u32 = 500;
const RETRY_BOUND: u32 = 2;
const PROPERTY_CASES: u32 = 256;

const E2E_BUDGET: Duration = Duration::from_secs(60);
const ROUND_TRIPS: usize = 200;
const LATENCY_ELEMENTS: usize = 2400;
const LATENCY_BUDGET: Duration = Duration::from_secs(20);

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

// ---------------------------------------------------------------- scoring

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Straight transcription of the score definitions, written without the
/// module's helpers.
fn brute_force(
    embeddings: &[Vec<f64>],
    text: &[f64],
    resolutions: &[u64],
    role: Role,
    config: &ScoringConfig,
) -> Vec<[f64; 5]> {
    let ncos = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for k in 0..a.len() {
            dot += a[k] * b[k];
            aa += a[k] * a[k];
            bb += b[k] * b[k];
        }
        (dot / (aa.sqrt() * bb.sqrt()) + 1.0) / 2.0
    };
    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += (a[k] - b[k]).powi(2);
        }
        s.sqrt()
    };
    let n = embeddings.len();
    let rmin = *resolutions.iter().min().unwrap() as f64;
    let rmax = *resolutions.iter().max().unwrap() as f64;
    let (h0, k) = match role {
        Role::Character => (150.0, 180.0),
        _ => (100.0, 120.0),
    };
    (0..n)
        .map(|i| {
            let div = if n == 1 {
                0.0
            } else {
                let mut total = 0.0;
                for j in 0..n {
                    if j != i {
                        total += (1.0 - ncos(&embeddings[i], &embeddings[j]) + dist(&embeddings[i], &embeddings[j])) / 2.0;
                    }
                }
                total / (n - 1) as f64
            };
            let cns = ncos(&embeddings[i], text);
            let res = if rmax == rmin { 1.0 } else { (resolutions[i] as f64 - rmin) / (rmax - rmin) };
            let total = config.w_div * div + config.w_cns * cns + config.w_res * res;
            [div, cns, res, total, h0 + total * k]
        })
        .collect()
}

fn scoring_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut elements = 0;
    for c in 0..ORACLE_CLUSTERS {
        let n = rng.random_range(1..=ORACLE_MAX_CLUSTER);
        let embeddings: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, ORACLE_DIM)).collect();
        let text = unit_vector(&mut rng, ORACLE_DIM);
        let tied = rng.random_bool(0.2);
        let resolutions: Vec<u64> = (0..n)
            .map(|_| if tied { 4096 } else { rng.random_range(64..200_000) })
            .collect();
        let role = Role::ALL[rng.random_range(0..3)];
        let config = if c % 2 == 0 {
            ScoringConfig::default()
        } else {
            ScoringConfig::with_weights(rng.random(), rng.random(), rng.random())
        };
        let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let members: Vec<Member> = (0..n)
            .map(|i| Member {
                id: &ids[i],
                embedding: &embeddings[i],
                resolution: resolutions[i],
            })
            .collect();
        let got = ok(score::score_cluster(&members, &text, role, &config))?;
        let want = brute_force(&embeddings, &text, &resolutions, role, &config);
        for (g, w) in got.iter().zip(&want) {
            let g = [g.s_div, g.s_cns, g.s_res, g.s_total, g.height];
            for (a, b) in g.iter().zip(w) {
                worst = worst.max((a - b).abs());
            }
        }
        elements += n;
    }
    let elapsed = started.elapsed();
    check!(worst <= ORACLE_TOLERANCE, "max deviation {worst:e} exceeds {ORACLE_TOLERANCE:e}");
    check!(elapsed < ORACLE_BUDGET, "took {elapsed:?}, budget {ORACLE_BUDGET:?}");
    Ok(format!(
        "{ORACLE_CLUSTERS} clusters, {elements} elements, max deviation {worst:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn analytic_anchors() -> Outcome {
    let e1 = [1.0, 0.0, 0.0, 0.0];
    let e2 = [0.0, 1.0, 0.0, 0.0];
    let single = ok(score::score_diversity(0, &[&e1]))?;
    check!(single == 0.0, "singleton diversity {single}");
    let same = ok(score::score_diversity(0, &[&e1, &e1]))?;
    check!(same == 0.0, "identical pair diversity {same}");
    let ortho = ok(score::score_diversity(0, &[&e1, &e2]))?;
    check!(
        (ortho - ORTHOGONAL_PAIR).abs() <= ORTHOGONAL_TOLERANCE,
        "orthogonal pair diversity {ortho}"
    );
    let res = score::score_resolution(500, &[500, 500, 500]);
    check!(res == 1.0, "all-equal resolution {res}");
    let lone = score::score_resolution(77, &[77]);
    check!(lone == 1.0, "singleton resolution {lone}");
    let combined = score::combine_score(0.6, 0.9, 0.3, &ScoringConfig::default());
    check!((combined - 0.5994).abs() <= COMBINE_TOLERANCE, "combined {combined}");
    let combined2 = score::combine_score(0.2, 0.5, 1.0, &ScoringConfig::default());
    check!((combined2 - 0.333 * 1.7).abs() <= COMBINE_TOLERANCE, "combined {combined2}");
    Ok(format!("orthogonal pair {ortho:.5}, (0.6, 0.9, 0.3) -> {combined:.4}"))
}

// ------------------------------------------------------- worked example

fn names(c: &Cluster) -> BTreeSet<String> {
    c.children.iter().map(|c| c.name.clone()).collect()
}

fn worked_example() -> Outcome {
    let dir = tmp();
    let library = synthetic_library(dir.path(), APPENDIX_LABELS, 2, SEED);
    let session = ok(curate::curate(
        STORY,
        &library,
        &MockBackend::new(SEED),
        &CurateConfig::default(),
        &dir.path().join("ses"),
    ))?;
    let central = set(&session.selection.central);
    let related = set(&session.selection.related);
    check!(central == set(["boy", "dog", "park"]), "central {central:?}");
    let want_related = set(["sky", "sun", "cloud", "grass", "tree", "flower", "frisbee", "ball", "sunglasses"]);
    check!(related == want_related, "related {related:?}");

    let by_role = |role: Role| -> BTreeSet<String> {
        session
            .classification
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(l, _)| l.clone())
            .collect()
    };
    check!(by_role(Role::Character) == set(["boy", "dog"]), "characters {:?}", by_role(Role::Character));
    check!(by_role(Role::Background) == set(["park", "sky"]), "backgrounds {:?}", by_role(Role::Background));
    let remaining: BTreeSet<String> = central
        .union(&related)
        .filter(|l| !["boy", "dog", "park", "sky"].contains(&l.as_str()))
        .cloned()
        .collect();
    check!(by_role(Role::Accessory) == remaining, "accessories {:?}", by_role(Role::Accessory));

    let acc = session.hierarchy.category(Role::Accessory);
    let groups: BTreeMap<String, BTreeSet<String>> =
        acc.children.iter().map(|g| (g.name.clone(), names(g))).collect();
    let want: BTreeMap<String, BTreeSet<String>> = [
        ("dog toy", set(["frisbee", "ball"])),
        ("human belongings", set(["sunglasses"])),
        ("environment", set(["sun", "cloud"])),
        ("plant", set(["grass", "tree", "flower"])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    check!(groups == want, "accessory groups {groups:?}");
    Ok(format!(
        "central 3, related 9, accessories {}, groups {:?}",
        remaining.len(),
        groups.keys().collect::<Vec<_>>()
    ))
}

fn ablations() -> Outcome {
    let dir = tmp();
    let library = synthetic_library(dir.path(), APPENDIX_LABELS, 3, SEED);
    let backend = MockBackend::new(SEED);
    let keyword = ok(curate::curate(
        STORY,
        &library,
        &backend,
        &CurateConfig {
            mode: SelectionMode::KeywordOnly,
            ..CurateConfig::default()
        },
        &dir.path().join("kw"),
    ))?;
    check!(set(&keyword.selection.central) == set(["boy", "dog", "park"]), "keyword central {:?}", keyword.selection.central);
    check!(keyword.selection.related.is_empty(), "keyword related {:?}", keyword.selection.related);

    let full = ok(curate::curate(STORY, &library, &backend, &CurateConfig::default(), &dir.path().join("full")))?;
    let sizes = layout::element_sizes(&library);
    let wide = LayoutOptions {
        canvas_width: 1.0e6,
        ..LayoutOptions::default()
    };
    let sized = ok(layout::layout_grid(&full.hierarchy, &sizes, &full.scoring, &wide))?;
    let roles = full.roles();
    for t in &sized.tiles {
        let s = &full.hierarchy.scores[&t.element_id];
        let role = roles[&t.element_id];
        let want = match role {
            Role::Character => 150.0 + s.s_total * 180.0,
            _ => 100.0 + s.s_total * 120.0,
        };
        check!(t.h == want, "sized tile {} has height {} not {want}", t.element_id, t.h);
    }

    let dfs: Vec<String> = sized.tiles.iter().map(|t| t.element_id.clone()).collect();
    let uniform_opts = |seed| LayoutOptions {
        present: PresentMode::Uniform,
        seed,
        ..wide.clone()
    };
    let uniform = ok(layout::layout_grid(&full.hierarchy, &sizes, &full.scoring, &uniform_opts(11)))?;
    check!(uniform.tiles.iter().all(|t| t.h == 100.0), "uniform heights are not all 100");
    let order: Vec<String> = uniform.tiles.iter().map(|t| t.element_id.clone()).collect();
    let mut expected = dfs.clone();
    expected.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    check!(order == expected, "uniform order is not the seeded shuffle of the DFS order");
    check!(order != dfs, "uniform order equals the DFS order");
    let again = ok(layout::layout_grid(&full.hierarchy, &sizes, &full.scoring, &uniform_opts(11)))?;
    check!(again == uniform, "uniform layout differs under the same seed");
    Ok(format!("keyword {{boy, dog, park}}, {} sized tiles exact, uniform h0 = 100 shuffled", sized.tiles.len()))
}

// ---------------------------------------------------- validation closure

fn label_pool() -> Vec<String> {
    let mut pool: Vec<String> = APPENDIX_LABELS.iter().map(|s| s.to_string()).collect();
    pool.extend(["unicorn", "dragon", "Boy", "  dog ", "spaceship", ""].map(String::from));
    pool
}

fn labels() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(label_pool()), 0..8)
}

fn malformed() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "not json at all".to_string(),
        "{\"central\": [\"boy\", ".to_string(),
        "null".to_string(),
        "[]".to_string(),
        "{}".to_string(),
        "{\"central\": \"boy\"}".to_string(),
        "{\"Character\": [1, 2]}".to_string(),
        "```json\n{\"broken\": }\n```".to_string(),
    ])
}

fn wrap(v: serde_json::Value, prose: bool) -> String {
    if prose {
        format!("Sure, here you go:\n```json\n{v}\n```\nHope it helps.")
    } else {
        v.to_string()
    }
}

fn select_reply() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => (labels(), labels(), any::<bool>()).prop_map(|(c, r, p)| wrap(json!({ "central": c, "related": r }), p)),
        1 => malformed(),
    ]
}

fn classify_reply() -> impl Strategy<Value = String> {
    let key = prop::sample::select(vec!["Character", "Characters", "Background", "Accessories", "Props", "accessory"]);
    prop_oneof![
        3 => (prop::collection::vec((key, labels()), 0..4), any::<bool>()).prop_map(|(entries, p)| {
            let mut m = serde_json::Map::new();
            for (k, v) in entries {
                m.insert(k.to_string(), json!(v));
            }
            wrap(serde_json::Value::Object(m), p)
        }),
        1 => malformed(),
    ]
}

fn cluster_reply() -> impl Strategy<Value = String> {
    let group = prop::sample::select(vec!["toys", "nature", "other", "plant", "things"]);
    let key = prop::sample::select(vec!["Accessories", "Character", "Background", "Stuff"]);
    prop_oneof![
        2 => (key.clone(), prop::collection::vec((group.clone(), labels()), 0..4), any::<bool>()).prop_map(|(k, groups, p)| {
            let mut m = serde_json::Map::new();
            for (g, v) in groups {
                m.insert(g.to_string(), json!(v));
            }
            wrap(json!({ k: m }), p)
        }),
        1 => (key.clone(), group, labels(), labels()).prop_map(|(k, g, a, b)| json!({ k: { g: { "inner": a }, "loose": b } }).to_string()),
        1 => (key, labels()).prop_map(|(k, v)| json!({ k: v }).to_string()),
        1 => malformed(),
    ]
}

#[derive(Debug, Clone)]
struct Script {
    select: Vec<String>,
    classify: Vec<String>,
    cluster: Vec<String>,
}

fn script() -> impl Strategy<Value = Script> {
    (
        prop::collection::vec(select_reply(), 0..5),
        prop::collection::vec(classify_reply(), 0..5),
        prop::collection::vec(cluster_reply(), 0..10),
    )
        .prop_map(|(select, classify, cluster)| Script { select, classify, cluster })
}

#[derive(Default)]
struct ClosureTally {
    sessions: std::cell::Cell<usize>,
    exhausted: std::cell::Cell<usize>,
    other: std::cell::Cell<usize>,
}

fn bump(c: &std::cell::Cell<usize>) {
    c.set(c.get() + 1);
}

fn closure_case(library: &ElementLibrary, out: &Path, s: Script, tally: &ClosureTally) -> Result<(), TestCaseError> {
    let replies = s.clone();
    let backend = ScriptedBackend::new(SEED, move |kind, _, _, i| {
        let list = match kind {
            Prompt::Select => &replies.select,
            Prompt::Classify => &replies.classify,
            Prompt::Cluster => &replies.cluster,
            _ => return None,
        };
        list.get(i as usize).cloned()
    });
    let config = CurateConfig {
        retries: RETRY_BOUND,
        parse_characters: false,
        ..CurateConfig::default()
    };
    let result = curate::curate(STORY, library, &backend, &config, out);
    let bound = (1 + RETRY_BOUND) as usize;
    prop_assert!(backend.calls_of(Prompt::Select) <= bound);
    prop_assert!(backend.calls_of(Prompt::Classify) <= bound);
    prop_assert!(backend.calls_of(Prompt::Cluster) <= 3 * bound);
    let session = match result {
        Ok(s) => s,
        Err(Error::Curation { stage, .. }) => {
            prop_assert!(matches!(stage, Stage::Select | Stage::Classify));
            let calls = if stage == Stage::Select {
                backend.calls_of(Prompt::Select)
            } else {
                backend.calls_of(Prompt::Classify)
            };
            prop_assert_eq!(calls, bound);
            bump(&tally.exhausted);
            return Ok(());
        }
        Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
    };
    bump(&tally.sessions);
    if session.label_clusters.values().any(|p| p.split('/').any(|n| n == curate::parse::OTHER_CLUSTER)) {
        bump(&tally.other);
    }
    prop_assert!(session.attempts.select <= 1 + RETRY_BOUND);
    prop_assert!(session.attempts.classify <= 1 + RETRY_BOUND);
    prop_assert!(session.attempts.cluster <= 3 * (1 + RETRY_BOUND));

    let available = set(library.labels());
    let selected: BTreeSet<String> = session.selection.all().cloned().collect();
    let listed = session.selection.central.len() + session.selection.related.len();
    prop_assert_eq!(listed, selected.len(), "selection repeats a label");
    prop_assert!(selected.is_subset(&available), "selection leaves the library");
    prop_assert_eq!(set(session.classification.keys()), selected.clone());
    prop_assert_eq!(set(session.label_clusters.keys()), selected.clone());
    prop_assert!(session.hierarchy.check().is_empty(), "{:?}", session.hierarchy.check());

    let leaves: BTreeSet<String> = session.hierarchy.leaves().into_iter().cloned().collect();
    for id in &leaves {
        let el = library.elements.get(id);
        prop_assert!(el.is_some(), "leaf {} is not a library element", id);
        prop_assert!(selected.contains(&el.unwrap().label), "leaf {} has unselected label", id);
    }
    for label in &selected {
        for id in library.elements_for(label) {
            prop_assert!(leaves.contains(id), "selected label {} lost element {}", label, id);
        }
    }
    Ok(())
}

fn validation_closure() -> Outcome {
    let dir = tmp();
    let library = synthetic_library(dir.path(), APPENDIX_LABELS, 1, SEED);
    let out = dir.path().join("ses");
    let mut runner = TestRunner::new(RunnerConfig {
        cases: FUZZ_CASES,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let tally = ClosureTally::default();
    ok(runner.run(&script(), |s| closure_case(&library, &out, s, &tally)))?;
    check!(tally.sessions.get() > 0 && tally.exhausted.get() > 0, "fuzz never reached both outcomes");
    Ok(format!(
        "{FUZZ_CASES} reply scripts, retry bound {RETRY_BOUND}: {} sessions ({} with `other` fallback), {} exhausted",
        tally.sessions.get(),
        tally.other.get(),
        tally.exhausted.get()
    ))
}

// ------------------------------------------------------ dedup and layout

fn dedup_groups() -> impl Strategy<Value = Vec<(u32, usize)>> {
    prop::collection::vec((0u32..1000, 1usize..4), 1..8)
}

fn dedup_property() -> Outcome {
    let mut runner = TestRunner::new(RunnerConfig {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    ok(runner.run(&(dedup_groups(), any::<u64>()), |(groups, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_value: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        let mut serial = 0;
        for (value, count) in groups {
            for _ in 0..count {
                serial += 1;
                by_value.entry(value).or_default().push(format!("{:06}", rng.random_range(0..1_000_000) * 100 + serial));
            }
        }
        let mut scores: Vec<(String, f64)> = by_value
            .iter()
            .flat_map(|(v, ids)| ids.iter().map(move |id| (id.clone(), *v as f64 / 997.0)))
            .collect();
        scores.shuffle(&mut rng);
        let refs: Vec<(&str, f64)> = scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        let suppressed = score::dedup_by_score(&refs);
        let mut expected = BTreeSet::new();
        for ids in by_value.values() {
            let keep = ids.iter().min().unwrap();
            expected.extend(ids.iter().filter(|id| *id != keep).cloned());
        }
        prop_assert_eq!(&suppressed, &expected);
        if by_value.values().all(|ids| ids.len() == 1) {
            prop_assert!(suppressed.is_empty());
        }
        Ok(())
    }))?;

    let dir = tmp();
    let mut library = synthetic_library(dir.path(), &["kite"], 3, SEED);
    let ids: Vec<String> = library.elements_for("kite").to_vec();
    let first = library.elements[&ids[0]].clone();
    for id in &ids[1..] {
        let e = library.elements.get_mut(id).unwrap();
        e.visual_embedding = first.visual_embedding.clone();
        e.resolution = first.resolution;
    }
    let mut h = AssetHierarchy::empty(&CategoryVocabulary::default());
    let mut c = Cluster::named("kite");
    c.leaves = ids.clone();
    h.category_mut(Role::Accessory).children.push(c);
    let text = BTreeMap::from([(
        "accessories/kite".to_string(),
        ok(MockBackend::new(SEED).embed_text("kite"))?.vector,
    )]);
    ok(score::score_hierarchy(&mut h, &library, &text, &ScoringConfig::default()))?;
    check!(h.suppressed == set(&ids[1..]), "identical elements: suppressed {:?}", h.suppressed);
    Ok(format!("{PROPERTY_CASES} random score groups plus identical cutouts"))
}

#[derive(Debug, Clone)]
struct RandomTree {
    root: Cluster,
    heights: BTreeMap<String, f64>,
    sizes: BTreeMap<String, (u32, u32)>,
}

fn random_cluster(rng: &mut ChaCha8Rng, depth: usize, next: &mut usize, t: &mut RandomTree) -> Cluster {
    let mut c = Cluster::named(format!("c{next}"));
    *next += 1;
    for _ in 0..rng.random_range(0..5) {
        let id = format!("el{next:04}");
        *next += 1;
        t.heights.insert(id.clone(), rng.random_range(20.0..400.0));
        t.sizes.insert(id.clone(), (rng.random_range(1..600), rng.random_range(1..300)));
        c.leaves.push(id);
    }
    if depth < 3 {
        for _ in 0..rng.random_range(0..3) {
            c.children.push(random_cluster(rng, depth + 1, next, t));
        }
    }
    c
}

fn dfs(c: &Cluster, out: &mut Vec<String>) {
    out.extend(c.leaves.iter().cloned());
    for child in &c.children {
        dfs(child, out);
    }
}

fn layout_property() -> Outcome {
    let mut runner = TestRunner::new(RunnerConfig {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let params = (any::<u64>(), 50.0f64..1500.0, prop_oneof![Just(0.0), 0.0f64..12.0], 0.0f64..0.3);
    let downscaled_rows = std::cell::Cell::new(0usize);
    ok(runner.run(&params, |(seed, canvas, gap, hide)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hierarchy = AssetHierarchy::empty(&CategoryVocabulary::default());
        let mut next = 0;
        let mut sizes = BTreeMap::new();
        for role in Role::ALL {
            let mut t = RandomTree {
                root: Cluster::default(),
                heights: BTreeMap::new(),
                sizes: BTreeMap::new(),
            };
            let mut c = random_cluster(&mut rng, 1, &mut next, &mut t);
            c.name = hierarchy.category(role).name.clone();
            t.root = c;
            for (id, h) in &t.heights {
                hierarchy.scores.insert(
                    id.clone(),
                    ScoreRecord { s_div: 0.0, s_cns: 0.0, s_res: 0.0, s_total: 0.0, height: *h },
                );
            }
            sizes.extend(t.sizes);
            *hierarchy.category_mut(role) = t.root;
        }
        let all: Vec<String> = hierarchy.scores.keys().cloned().collect();
        hierarchy.suppressed = all.iter().filter(|_| rng.random_bool(hide)).cloned().collect();
        let options = LayoutOptions {
            canvas_width: canvas,
            gap,
            ..LayoutOptions::default()
        };
        let grid = layout::layout_grid(&hierarchy, &sizes, &ScoringConfig::default(), &options)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;

        let mut expected = Vec::new();
        for c in &hierarchy.categories {
            dfs(c, &mut expected);
        }
        expected.retain(|id| !hierarchy.suppressed.contains(id));
        let order: Vec<String> = grid.tiles.iter().map(|t| t.element_id.clone()).collect();
        prop_assert_eq!(&order, &expected);

        let eps = 1e-9;
        for (i, a) in grid.tiles.iter().enumerate() {
            for b in &grid.tiles[i + 1..] {
                let overlap = a.x + eps < b.x + b.w && b.x + eps < a.x + a.w && a.y + eps < b.y + b.h && b.y + eps < a.y + a.h;
                prop_assert!(!overlap, "{} overlaps {}", a.element_id, b.element_id);
            }
        }
        for w in grid.tiles.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(b.y > a.y || (b.y == a.y && b.x > a.x), "tiles are not in row-major order");
        }
        let mut rows: BTreeMap<u64, Vec<&layout::Tile>> = BTreeMap::new();
        for t in &grid.tiles {
            rows.entry(t.y.to_bits()).or_default().push(t);
        }
        for row in rows.values() {
            let right = row.iter().map(|t| t.x + t.w).fold(0.0, f64::max);
            if right > canvas + eps {
                prop_assert!(row.len() == 1, "row of {} tiles is {} wide on a {} canvas", row.len(), right, canvas);
            }
            if row.len() == 1 && (row[0].w - canvas).abs() < eps {
                downscaled_rows.set(downscaled_rows.get() + 1);
            }
        }
        Ok(())
    }))?;
    Ok(format!("{PROPERTY_CASES} random hierarchies, {} single-tile downscale rows", downscaled_rows.get()))
}

// ----------------------------------------------------------- end to end

struct FixtureRun {
    root: tempfile::TempDir,
    elapsed: Duration,
}

fn fixture_run() -> Result<FixtureRun, String> {
    let root = tmp();
    let started = Instant::now();
    let (lib, ses) = (root.path().join("lib"), root.path().join("ses"));
    let descriptor = BackendDescriptor::mock(SEED);
    ok(pipeline::prepare(&fixture(), &lib, &descriptor, &PrepareOptions::default()))?;
    let backend = ok(descriptor.connect())?;
    ok(pipeline::curate_into(&lib, &ses, STORY, backend.as_ref(), &CurateConfig::default()))?;
    let (s, l) = ok(pipeline::open_session(&ses))?;
    let p = ok(pipeline::present(&s, &l, &LayoutOptions::default()))?;
    ok(json::write_file(&root.path().join("presentation.json"), &p))?;
    ok(pipeline::export_session(&ses, None, &LayoutOptions::default(), &root.path().join("bundle")))?;
    Ok(FixtureRun {
        elapsed: started.elapsed(),
        root,
    })
}

const ARTIFACTS: [&str; 4] = ["library.json", "session.json", "presentation.json", "assets.json"];

fn artifacts(library: &Path, session: &Path, presentation: &Path, bundle: &Path) -> Result<Vec<Vec<u8>>, String> {
    [
        library.join("library.json"),
        session.join("session.json"),
        presentation.to_path_buf(),
        bundle.join("assets.json"),
    ]
    .iter()
    .map(|p| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display())))
    .collect()
}

fn fixture_artifacts(run: &FixtureRun) -> Result<Vec<Vec<u8>>, String> {
    let r = run.root.path();
    artifacts(&r.join("lib"), &r.join("ses"), &r.join("presentation.json"), &r.join("bundle"))
}

fn compare_artifacts(a: &[Vec<u8>], b: &[Vec<u8>], what: &str) -> Result<(), String> {
    for (i, name) in ARTIFACTS.iter().enumerate() {
        check!(a[i] == b[i], "{name} differs between {what}");
    }
    Ok(())
}

fn end_to_end_determinism() -> Outcome {
    let a = fixture_run()?;
    let b = fixture_run()?;
    compare_artifacts(&fixture_artifacts(&a)?, &fixture_artifacts(&b)?, "two fresh runs")?;
    let slowest = a.elapsed.max(b.elapsed);
    check!(slowest < E2E_BUDGET, "run took {slowest:?}, budget {E2E_BUDGET:?}");
    Ok(format!("4 artifacts byte-identical, slowest run {:.2}s", slowest.as_secs_f64()))
}

fn random_scene(rng: &mut ChaCha8Rng, ctx: &SceneContext, id: usize) -> collage_forge::model::SceneDocument {
    let elements: Vec<&String> = ctx.elements.keys().collect();
    let clusters: Vec<String> = ctx.elements.values().map(|i| i.cluster.clone()).collect();
    let mut doc = scene::blank_scene(
        format!("scene-{id}"),
        Canvas {
            width: rng.random_range(64..480),
            height: rng.random_range(64..360),
        },
    );
    for _ in 0..rng.random_range(0..30) {
        let pid = |rng: &mut ChaCha8Rng, doc: &collage_forge::model::SceneDocument| {
            doc.placements
                .get(rng.random_range(0..doc.placements.len().max(1)))
                .map(|p| p.placement_id.clone())
                .unwrap_or_else(|| "p0".into())
        };
        let coord = |rng: &mut ChaCha8Rng| rng.random_range(-200.0..600.0);
        let op = match rng.random_range(0..9) {
            0 | 1 => SceneOp::Place {
                element_id: elements[rng.random_range(0..elements.len())].clone(),
                x: coord(rng),
                y: coord(rng),
                scale: rng.random_range(0.05..3.0),
            },
            2 => SceneOp::Move { placement_id: pid(rng, &doc), x: coord(rng), y: coord(rng) },
            3 => SceneOp::Copy { placement_id: pid(rng, &doc), dx: coord(rng), dy: coord(rng) },
            4 => SceneOp::Delete { placement_id: pid(rng, &doc) },
            5 => SceneOp::Scale { placement_id: pid(rng, &doc), factor: rng.random_range(0.2..2.0) },
            6 => SceneOp::Flip { placement_id: pid(rng, &doc) },
            7 => SceneOp::Rotate { placement_id: pid(rng, &doc), degrees: rng.random_range(-360.0..360.0) },
            _ => {
                if rng.random_bool(0.5) {
                    SceneOp::SetVisible { target: pid(rng, &doc), visible: rng.random_bool(0.5) }
                } else if rng.random_bool(0.5) {
                    SceneOp::SetVisible {
                        target: clusters[rng.random_range(0..clusters.len())].clone(),
                        visible: rng.random_bool(0.5),
                    }
                } else {
                    SceneOp::Reorder {
                        placement_id: pid(rng, &doc),
                        index: rng.random_range(0..doc.placements.len().max(1)),
                    }
                }
            }
        };
        if let Ok(next) = scene::apply(&doc, ctx, &op) {
            doc = next;
        }
    }
    doc
}

fn export_round_trip() -> Outcome {
    let run = fixture_run()?;
    let ses = run.root.path().join("ses");
    let (session, library) = ok(pipeline::open_session(&ses))?;
    let ctx = SceneContext::new(&session.hierarchy, &library);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut placements = 0;
    for i in 0..ROUND_TRIPS {
        let doc = random_scene(&mut rng, &ctx, i);
        let problems = scene::check_scene(&doc, &ctx);
        check!(problems.is_empty(), "generated scene {i} is invalid: {problems:?}");
        let out = run.root.path().join(format!("rt{i}"));
        ok(export::export_bundle(&session, &ses, &library, &doc, &out))?;
        let (hierarchy, back) = ok(export::import_bundle(&out))?;
        check!(hierarchy == session.hierarchy, "scene {i}: hierarchy changed");
        let mut expected = doc.clone();
        expected.revision = back.revision;
        check!(back == expected, "scene {i} does not survive export and import");
        placements += doc.placements.len();
        let _ = std::fs::remove_dir_all(&out);
    }
    Ok(format!("{ROUND_TRIPS} scenes, {placements} placements"))
}

fn entry_point_equivalence() -> Outcome {
    let lib_run = fixture_run()?;
    let reference = fixture_artifacts(&lib_run)?;

    let dir = tmp();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let fixture_dir = fixture().to_string_lossy().into_owned();
    let steps: [Vec<&str>; 4] = [
        vec!["prepare", "--collection", &fixture_dir, "--out", "LIB", "--seed", "7"],
        vec!["curate", "--library", "LIB", "--story", STORY, "--out", "SES"],
        vec!["layout", "--session", "SES", "--out", "PRES"],
        vec!["export", "--session", "SES", "--out", "BUNDLE"],
    ];
    let (lib, ses, pres, bundle) = (d("lib"), d("ses"), d("presentation.json"), d("bundle"));
    for step in &steps {
        let args: Vec<&str> = step
            .iter()
            .map(|a| match *a {
                "LIB" => lib.as_str(),
                "SES" => ses.as_str(),
                "PRES" => pres.as_str(),
                "BUNDLE" => bundle.as_str(),
                other => other,
            })
            .collect();
        let out = cli(&args);
        check!(out.status.success(), "cli {} failed: {}", step[0], String::from_utf8_lossy(&out.stderr));
    }
    let via_cli = artifacts(Path::new(&lib), Path::new(&ses), Path::new(&pres), Path::new(&bundle))?;
    compare_artifacts(&reference, &via_cli, "library and CLI")?;

    let data = tmp();
    let server = Server::start(data.path());
    let library_id = server.prepare(&fixture());
    let session_id = server.session(&json!({ "library_id": library_id, "story": STORY }));
    let (status, body) = server.post(&format!("/sessions/{session_id}/export"), &json!({}));
    check!(status == 200, "export returned {status}: {body}");
    let store = data.path();
    let sdir = store.join("sessions").join(&session_id);
    let via_api = artifacts(
        &store.join("libraries").join(&library_id),
        &sdir,
        &sdir.join("presentation.json"),
        &sdir.join("export"),
    )?;
    compare_artifacts(&reference, &via_api, "library and API")?;
    let (status, presented) = server.get(&format!("/sessions/{session_id}/presentation"));
    check!(status == 200, "presentation returned {status}");
    let direct: serde_json::Value = ok(serde_json::from_slice(&reference[2]))?;
    check!(presented == direct, "presentation endpoint differs from the library result");
    Ok("library, CLI and API artifacts byte-identical".into())
}

fn curation_latency() -> Outcome {
    let dir = tmp();
    let per_label = LATENCY_ELEMENTS.div_ceil(APPENDIX_LABELS.len());
    let library = synthetic_library(dir.path(), APPENDIX_LABELS, per_label, SEED);
    let n = library.elements.len();
    check!(n >= LATENCY_ELEMENTS, "library has only {n} elements");
    let backend = MockBackend::new(SEED);
    let started = Instant::now();
    let session = ok(curate::curate(STORY, &library, &backend, &CurateConfig::default(), &dir.path().join("ses")))?;
    let p = ok(pipeline::present(&session, &library, &LayoutOptions::default()))?;
    let elapsed = started.elapsed();
    check!(!p.layout.tiles.is_empty(), "nothing presented");
    check!(elapsed <= LATENCY_BUDGET, "took {elapsed:?}, budget {LATENCY_BUDGET:?}");
    Ok(format!(
        "{n} elements, {} presented, {:.2}s",
        p.layout.tiles.len(),
        elapsed.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("scoring oracle equivalence", scoring_oracle),
        ("analytic anchor cases", analytic_anchors),
        ("worked example fidelity", worked_example),
        ("ablation modes", ablations),
        ("validation closure", validation_closure),
        ("dedup", dedup_property),
        ("layout invariants", layout_property),
        ("end-to-end determinism", end_to_end_determinism),
        ("export round-trip", export_round_trip),
        ("entry point equivalence", entry_point_equivalence),
        ("curation latency", curation_latency),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
