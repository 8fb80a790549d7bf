//! Black-box contract tests every backend must pass, run against the mock
//! in process and over HTTP in both transfer modes. A deliberately faulty
//! server checks that contract violations surface as protocol errors.

mod common;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use collage_forge::backend::http::{self as wire, router};
use collage_forge::backend::{
    Backend, BackendDescriptor, BackendError, Checked, MockBackend, RemoteBackend, Transfer,
};
use collage_forge::curate::prompts;
use collage_forge::model::{
    BoundingBox, CategoryVocabulary, JointRole, LabelCategory, LabelSelection, PhotoCollection,
    SourceImage,
};
use collage_forge::pipeline;
use collage_forge::preprocess::PrepareOptions;
use common::*;
use serde_json::json;

struct HttpServer {
    url: String,
    _runtime: tokio::runtime::Runtime,
}

fn serve(app: Router) -> HttpServer {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    runtime.spawn(async move { axum::serve(listener, app).await.unwrap() });
    HttpServer {
        url: format!("http://{addr}"),
        _runtime: runtime,
    }
}

fn mock_server(scratch: &Path) -> HttpServer {
    serve(router(Arc::new(MockBackend::new(SEED)), scratch.to_path_buf()))
}

fn remote(url: &str, transfer: Transfer) -> RemoteBackend {
    RemoteBackend::new(url, Duration::from_secs(30), transfer)
}

fn images() -> Vec<SourceImage> {
    PhotoCollection::from_dir(&fixture()).unwrap().images
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> bool {
    (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9
}

/// The shared contract. `work` is a scratch directory for outputs.
fn contract(backend: &dyn Backend, work: &Path) {
    backend.health().unwrap();
    let dim = backend.embedding_dim();

    let a = backend.embed_text("dog").unwrap().vector;
    assert!(unit(&a.0), "text embedding is not unit length");
    if let Some(d) = dim {
        assert_eq!(a.dim(), d);
    }
    assert_eq!(a, backend.embed_text("dog").unwrap().vector);
    assert!(matches!(backend.embed_text(""), Err(BackendError::Precondition(_))));

    for image in images() {
        let tags = backend.tag_image(&image).unwrap();
        assert!(!tags.tags.is_empty(), "{}: no tags", image.image_id);
        assert_eq!(tags, backend.tag_image(&image).unwrap());
        for tag in tags.tags.iter().filter(|t| matches!(t.category, LabelCategory::Object | LabelCategory::Scene)) {
            assert!(!tag.text.trim().is_empty());
            let found = backend.detect(&image, &tag.text).unwrap();
            for d in &found.boxes {
                assert!(d.bbox.fits_within(image.width, image.height), "{:?} out of bounds", d.bbox);
                assert!((0.0..=1.0).contains(&d.confidence));
            }
        }
        assert!(backend.detect(&image, "unicorn").unwrap().boxes.is_empty());
    }

    let image = &images()[0];
    let boy = backend.detect(image, "boy").unwrap().boxes[0].bbox;
    let out = work.join("boy_0001.png");
    let seg = backend.segment(image, boy, &out).unwrap();
    assert!(boy.contains(&seg.tight_bbox));
    assert!(seg.mask_path.is_file());
    let cut = image::open(&seg.mask_path).unwrap();
    assert!(cut.color().has_alpha());
    assert_eq!((cut.width(), cut.height()), (seg.tight_bbox.w, seg.tight_bbox.h));

    let tiny = backend
        .segment(image, BoundingBox::new(3, 4, 1, 1), &work.join("dot_tiny.png"))
        .unwrap();
    assert_eq!((tiny.tight_bbox.w, tiny.tight_bbox.h), (1, 1));

    let e = backend.embed_image(&seg.mask_path).unwrap().vector;
    assert!(unit(&e.0));
    assert_eq!(e.dim(), a.dim());
    let t = backend.embed_text("boy").unwrap().vector;
    assert!(cosine(&e.0, &t.0) >= 0.9, "image and label embeddings too far apart");

    let rig = backend.parse_character(&seg.mask_path, &work.join("parts")).unwrap().rig;
    assert!(!rig.parts.is_empty());
    assert!(rig.joints.iter().any(|j| j.role == JointRole::RotationCenter));
    assert!(rig.joints_within(seg.tight_bbox.w, seg.tight_bbox.h));
    for part in &rig.parts {
        assert!(part.mask_path.is_file(), "{} missing", part.mask_path.display());
    }

    let labels: Vec<String> = APPENDIX_LABELS.iter().map(|s| s.to_string()).collect();
    let reply = backend.llm_complete(&prompts::select_prompt(&labels), STORY).unwrap();
    let doc = reply.parsed_json.expect("selector reply is JSON");
    assert_eq!(doc["central"], json!(["boy", "dog", "park"]));
    assert_eq!(
        set(doc["related"].as_array().unwrap().iter().map(|v| v.as_str().unwrap())),
        set(["sky", "sun", "cloud", "grass", "tree", "flower", "frisbee", "ball", "sunglasses"])
    );
    let selection = LabelSelection {
        central: vec!["boy".into(), "dog".into(), "park".into()],
        related: ["sky", "sun", "cloud", "grass", "tree", "flower", "frisbee", "ball", "sunglasses"]
            .map(String::from)
            .to_vec(),
    };
    let vocab = CategoryVocabulary::default();
    let reply = backend
        .llm_complete(&prompts::classify_prompt(&vocab), &prompts::classify_payload(&selection))
        .unwrap();
    let doc = reply.parsed_json.unwrap();
    assert_eq!(doc["Character"], json!(["boy", "dog"]));
    assert_eq!(doc["Background"], json!(["park", "sky"]));
}

#[test]
fn mock_in_process() {
    let work = tempfile::tempdir().unwrap();
    contract(&MockBackend::new(SEED), work.path());
}

#[test]
fn mock_behind_checks() {
    let work = tempfile::tempdir().unwrap();
    let backend = BackendDescriptor::mock(SEED).connect().unwrap();
    contract(backend.as_ref(), work.path());
}

#[test]
fn mock_over_http_shared_path() {
    let scratch = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let server = mock_server(scratch.path());
    contract(&remote(&server.url, Transfer::SharedPath), work.path());
}

/// Inline transfer does not carry mock sidecars, so the server sees
/// synthetic annotations; the contract still holds apart from the
/// fixture-specific detections.
#[test]
fn mock_over_http_inline() {
    let scratch = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let server = mock_server(scratch.path());
    let backend = remote(&server.url, Transfer::Inline);
    backend.health().unwrap();
    let local = MockBackend::new(SEED);
    assert_eq!(backend.embed_text("kite").unwrap(), local.embed_text("kite").unwrap());
    for image in images() {
        let tags = backend.tag_image(&image).unwrap();
        assert!(!tags.tags.is_empty());
        for tag in &tags.tags {
            for d in backend.detect(&image, &tag.text).unwrap().boxes {
                assert!(d.bbox.fits_within(image.width, image.height));
                let out = work.path().join(format!("{}_{}.png", tag.text.replace(' ', "-"), image.image_id.replace('_', "")));
                let seg = backend.segment(&image, d.bbox, &out).unwrap();
                assert!(d.bbox.contains(&seg.tight_bbox));
                assert!(out.is_file(), "inline cutout was not written locally");
                let v = backend.embed_image(&out).unwrap().vector;
                assert!(unit(&v.0));
            }
        }
    }
    let cutout = work.path().join("boy_x.png");
    image::RgbaImage::from_pixel(20, 40, image::Rgba([9, 9, 9, 255])).save(&cutout).unwrap();
    assert_eq!(backend.embed_image(&cutout).unwrap(), local.embed_image(&cutout).unwrap());
    let rig = backend.parse_character(&cutout, &work.path().join("parts")).unwrap().rig;
    assert!(rig.parts.iter().all(|p| p.mask_path.starts_with(work.path().join("parts"))));
    assert!(rig.parts.iter().all(|p| p.mask_path.is_file()));
}

#[test]
fn shared_path_prepare_matches_in_process() {
    let scratch = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let server = mock_server(scratch.path());
    let mut descriptor = BackendDescriptor::remote(&server.url, 30.0);
    descriptor.transfer = Some(Transfer::SharedPath);
    let over_http = pipeline::prepare(&fixture(), &out.path().join("http"), &descriptor, &PrepareOptions::default()).unwrap();
    let local = pipeline::prepare(&fixture(), &out.path().join("local"), &BackendDescriptor::mock(SEED), &PrepareOptions::default()).unwrap();
    assert_eq!(over_http.library.elements, local.library.elements);
    assert_eq!(over_http.library.label_index, local.library.label_index);
    let cutouts = |d: &str| tree_bytes(&out.path().join(d).join("cutouts"));
    assert_eq!(cutouts("http"), cutouts("local"));
}

#[test]
fn unreachable_backend_is_a_transport_error() {
    let backend = remote("http://127.0.0.1:9", Transfer::Inline);
    assert!(matches!(backend.health(), Err(BackendError::Transport(_))));
    assert!(matches!(backend.embed_text("dog"), Err(BackendError::Transport(_))));
}

#[test]
fn server_errors_keep_their_kind() {
    let scratch = tempfile::tempdir().unwrap();
    let server = mock_server(scratch.path());
    let backend = remote(&server.url, Transfer::SharedPath);
    assert!(matches!(backend.embed_text("  "), Err(BackendError::Precondition(_))));
    let missing = SourceImage {
        image_id: "ghost".into(),
        path: PathBuf::from("/nonexistent/ghost.png"),
        width: 10,
        height: 10,
    };
    assert!(backend.tag_image(&missing).is_err());
}

fn faulty() -> Router {
    Router::new()
        .route(
            wire::ROUTE_DETECT,
            post(|| async { Json(json!({ "boxes": [{ "label": "boy", "bbox": { "x": 200, "y": 0, "w": 100, "h": 10 }, "confidence": 0.9 }] })) }),
        )
        .route(
            wire::ROUTE_SEGMENT,
            post(|| async { Json(json!({ "tight_bbox": { "x": 0, "y": 0, "w": 0, "h": 0 } })) }),
        )
        .route(
            wire::ROUTE_EMBED_TEXT,
            post(|| async { Json(json!({ "vector": [0.5, 0.5, 0.5] })) }),
        )
        .route(
            wire::ROUTE_PARSE_CHARACTER,
            post(|| async {
                Json(json!({
                    "parts": [{ "part_name": "head", "png_base64": wire::b64(&png_bytes(2, 2)) }],
                    "joints": [{ "joint_name": "neck", "x": 500.0, "y": 1.0, "role": "rotation_center" }],
                }))
            }),
        )
        .route(
            wire::ROUTE_LLM,
            post(|| async { Json(json!({ "raw_text": "I think {\"central\": [\"boy\"" })) }),
        )
        .route(wire::ROUTE_TAG, post(|| async { "not json" }))
}

fn png_bytes(w: u32, h: u32) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::RgbaImage::from_pixel(w, h, image::Rgba([1, 2, 3, 255]))
        .write_to(&mut out, image::ImageFormat::Png)
        .unwrap();
    out.into_inner()
}

#[test]
fn contract_violations_are_protocol_errors() {
    let server = serve(faulty());
    let work = tempfile::tempdir().unwrap();
    let backend = Checked::new(Arc::new(remote(&server.url, Transfer::Inline)));
    let image = images().remove(0);
    let protocol = |r: Result<(), BackendError>, what: &str| {
        assert!(matches!(r, Err(BackendError::Protocol(_))), "{what}: {r:?}");
    };
    protocol(backend.detect(&image, "boy").map(|_| ()), "out-of-bounds box");
    protocol(
        backend.segment(&image, BoundingBox::new(0, 0, 10, 10), &work.path().join("x_1.png")).map(|_| ()),
        "empty segmentation",
    );
    protocol(backend.embed_text("dog").map(|_| ()), "non-unit embedding");
    let cutout = work.path().join("boy_1.png");
    std::fs::write(&cutout, png_bytes(10, 10)).unwrap();
    protocol(
        backend.parse_character(&cutout, &work.path().join("parts")).map(|_| ()),
        "joint outside cutout",
    );
    protocol(backend.tag_image(&image).map(|_| ()), "malformed body");
    let reply = backend.llm_complete("system", "payload").unwrap();
    assert!(reply.parsed_json.is_none());
}
