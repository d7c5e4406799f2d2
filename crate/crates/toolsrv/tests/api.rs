mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use raw2raw_core::annotation::RegionPair;
use raw2raw_core::rawio::Patch;
use raw2raw_toolsrv::dataset::DatasetRoot;
use raw2raw_toolsrv::server::{router, AppState};

struct Fixture {
    dir: tempfile::TempDir,
    app: axum::Router,
}

fn open(root: &std::path::Path) -> axum::Router {
    let ds = DatasetRoot::open(root).unwrap();
    router(Arc::new(AppState::open(ds, 0.05).unwrap()))
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    common::two_pair_dataset(dir.path());
    let app = open(dir.path());
    Fixture { dir, app }
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, bytes) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn chart_body(ds: &DatasetRoot, id: &str) -> Value {
    let rec = ds.chart_record(id).unwrap();
    json!({ "chart_a": rec.chart_a, "chart_b": rec.chart_b })
}

fn regions(root: &std::path::Path, id: &str, n: usize) -> Vec<RegionPair> {
    let ds = DatasetRoot::open(root).unwrap();
    let f = ds.load_pair(id).unwrap();
    let r = common::homogeneous_regions(&f.a_free, &f.b_free, 4, n);
    assert_eq!(r.len(), n, "fixture needs {n} homogeneous regions");
    r
}

#[tokio::test]
async fn lists_both_pairs() {
    let fx = fixture();
    let (s, v) = call_json(&fx.app, Method::GET, "/pairs", None).await;
    assert_eq!(s, StatusCode::OK);
    let pairs = v.as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0]["pair_id"], "anchor-000");
    assert_eq!(pairs[1]["pair_id"], "anchor-001");
    assert_eq!(pairs[0]["status"], "DRAFT");
    assert_eq!(pairs[0]["n_samples"], 0);

    let (s, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-001", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["height"], 64);
    assert_eq!(v["record"]["regions"], json!([]));
    let (s, _) = call(&fx.app, Method::GET, "/pairs/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn preview_is_png_of_image_size() {
    let fx = fixture();
    let (_, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-000", None).await;
    let id = v["images"]["a_chart"].as_str().unwrap().to_string();
    let (s, bytes) = call(&fx.app, Method::GET, &format!("/images/{id}/preview"), None).await;
    assert_eq!(s, StatusCode::OK);
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    let (s, _) = call(&fx.app, Method::GET, "/images/missing/preview", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn chart_and_regions_update_live_fit() {
    let fx = fixture();
    let ds = DatasetRoot::open(fx.dir.path()).unwrap();
    let (s, v) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/chart", Some(chart_body(&ds, "anchor-000"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["fit"]["n_samples"], 24);
    assert_eq!(v["fit"]["kernel"], "POLY11");
    assert!(v["fit"]["residual_rms"].as_f64().unwrap() >= 0.0);

    let r = &regions(fx.dir.path(), "anchor-000", 1)[0];
    let (s, v) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/regions", Some(json!(r))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["fit"]["n_samples"], 25);
    assert!(v["fit"]["residual_rms"].is_number());
    assert_eq!(v["record"]["regions"].as_array().unwrap().len(), 1);

    let (s, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-000/fit", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["n_samples"], 25);
    let f = v["out_of_gamut_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
}

#[tokio::test]
async fn invalid_patches_are_rejected_without_changes() {
    let fx = fixture();
    let out = json!({ "patch_a": {"x": 62, "y": 0, "size": 4}, "patch_b": {"x": 0, "y": 0, "size": 4} });
    let (s, v) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/regions", Some(out)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("out of bounds"));

    let tiny = json!({ "patch_a": {"x": 0, "y": 0, "size": 1}, "patch_b": {"x": 0, "y": 0, "size": 1} });
    let (s, _) = call(&fx.app, Method::POST, "/pairs/anchor-000/regions", Some(tiny)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let ds = DatasetRoot::open(fx.dir.path()).unwrap();
    let f = ds.load_pair("anchor-000").unwrap();
    let edge = common::inhomogeneous_region(&f.a_free, 16).expect("scene has an edge");
    let (s, v) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/regions", Some(json!(edge))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("not homogeneous"));

    let mut chart = chart_body(&ds, "anchor-000");
    chart["chart_b"].as_array_mut().unwrap().pop();
    let (s, _) = call(&fx.app, Method::POST, "/pairs/anchor-000/chart", Some(chart)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let bad = json!({ "chart_a": [Patch::new(60, 60, 8)], "chart_b": [Patch::new(0, 0, 8)] });
    let (s, _) = call(&fx.app, Method::POST, "/pairs/anchor-000/chart", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-000", None).await;
    assert_eq!(v["record"]["regions"], json!([]));
    assert_eq!(v["record"]["chart_a"], json!([]));
    assert!(!ds.annotation_path("anchor-000").exists());
}

#[tokio::test]
async fn delete_region_by_index() {
    let fx = fixture();
    for r in regions(fx.dir.path(), "anchor-001", 2) {
        let (s, _) = call(&fx.app, Method::POST, "/pairs/anchor-001/regions", Some(json!(r))).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, _) = call(&fx.app, Method::DELETE, "/pairs/anchor-001/regions/2", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call_json(&fx.app, Method::DELETE, "/pairs/anchor-001/regions/0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["record"]["regions"].as_array().unwrap().len(), 1);
    assert_eq!(v["fit"]["n_samples"], 1);
    assert!(v["fit"]["residual_rms"].is_null());
}

#[tokio::test]
async fn commit_needs_eleven_samples() {
    let fx = fixture();
    for r in regions(fx.dir.path(), "anchor-000", 3) {
        call(&fx.app, Method::POST, "/pairs/anchor-000/regions", Some(json!(r))).await;
    }
    let (s, v) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/commit", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("3 samples"));
    let (_, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-000", None).await;
    assert_eq!(v["record"]["status"], "DRAFT");
}

#[tokio::test]
async fn commit_is_idempotent_and_survives_reload() {
    let fx = fixture();
    let ds = DatasetRoot::open(fx.dir.path()).unwrap();
    call(&fx.app, Method::POST, "/pairs/anchor-000/chart", Some(chart_body(&ds, "anchor-000"))).await;
    let (s, first) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/commit", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["status"], "COMMITTED");
    assert_eq!(first["n_samples"], 24);
    assert_eq!(first["hash"].as_str().unwrap().len(), 64);
    let stored_before = std::fs::read(ds.annotation_path("anchor-000")).unwrap();

    let (s, second) = call_json(&fx.app, Method::POST, "/pairs/anchor-000/commit", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first, second);
    assert_eq!(std::fs::read(ds.annotation_path("anchor-000")).unwrap(), stored_before);

    // A fresh service re-validates the committed record and serves it unchanged.
    let reopened = open(fx.dir.path());
    let (_, v) = call_json(&reopened, Method::GET, "/pairs/anchor-000", None).await;
    assert_eq!(v["record"]["status"], "COMMITTED");
    assert_eq!(v["commit"]["hash"], first["hash"]);
    let (_, third) = call_json(&reopened, Method::POST, "/pairs/anchor-000/commit", None).await;
    assert_eq!(third, first);

    // Any mutation returns the record to draft.
    let r = &regions(fx.dir.path(), "anchor-000", 1)[0];
    let (_, v) = call_json(&reopened, Method::POST, "/pairs/anchor-000/regions", Some(json!(r))).await;
    assert_eq!(v["record"]["status"], "DRAFT");
}

#[tokio::test]
async fn corrupted_committed_record_fails_reload() {
    let fx = fixture();
    let ds = DatasetRoot::open(fx.dir.path()).unwrap();
    call(&fx.app, Method::POST, "/pairs/anchor-001/chart", Some(chart_body(&ds, "anchor-001"))).await;
    let (s, _) = call(&fx.app, Method::POST, "/pairs/anchor-001/commit", None).await;
    assert_eq!(s, StatusCode::OK);
    let path = ds.annotation_path("anchor-001");
    let mut v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["chart_a"][0]["x"] = json!(1000);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(AppState::open(DatasetRoot::open(fx.dir.path()).unwrap(), 0.05).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_mutations_are_serialized() {
    let fx = fixture();
    let rs = regions(fx.dir.path(), "anchor-000", 8);
    let mut set = tokio::task::JoinSet::new();
    for r in rs.clone() {
        let app = fx.app.clone();
        set.spawn(async move { call(&app, Method::POST, "/pairs/anchor-000/regions", Some(json!(r))).await.0 });
        let app = fx.app.clone();
        set.spawn(async move { call(&app, Method::GET, "/pairs/anchor-000/fit", None).await.0 });
    }
    while let Some(s) = set.join_next().await {
        assert_eq!(s.unwrap(), StatusCode::OK);
    }
    let (_, v) = call_json(&fx.app, Method::GET, "/pairs/anchor-000", None).await;
    assert_eq!(v["record"]["regions"].as_array().unwrap().len(), rs.len());
    let stored: Value =
        serde_json::from_slice(&std::fs::read(DatasetRoot::open(fx.dir.path()).unwrap().annotation_path("anchor-000")).unwrap())
            .unwrap();
    assert_eq!(stored["regions"].as_array().unwrap().len(), rs.len());
}
