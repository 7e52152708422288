use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use bbs_cli::server::{router, AppState, ServerConfig};
use bbs_core::camera::{Intrinsics, PoseRecord};
use bbs_core::fixtures::{demo_room, room_orbit, source_corpus};
use bbs_core::render::export::{decode_depth_png, decode_png, decode_semantic_png};
use bbs_core::render::{normalize_depth, render_scene, RenderConfig};
use bbs_core::voxel::VoxelGrid;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(store: &std::path::Path, max_grid_cells: usize) -> Router {
    let cfg = ServerConfig {
        store_dir: store.to_path_buf(),
        bind: "127.0.0.1:0".into(),
        max_grid_cells,
    };
    router(Arc::new(AppState::new(cfg).unwrap()))
}

async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    body: Value,
    accept: Option<&str>,
) -> (StatusCode, HeaderMap, Bytes) {
    let mut req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json");
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let body = if body.is_null() {
        Body::empty()
    } else {
        Body::from(body.to_string())
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    (status, headers, to_bytes(resp.into_body(), usize::MAX).await.unwrap())
}

fn json_of(b: &Bytes) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn view() -> (Intrinsics, PoseRecord) {
    let traj = room_orbit(6.0, 5.0, 3.0, 4, Intrinsics::from_vfov(48, 32, 60.0));
    (traj.intrinsics, traj.poses[1].into())
}

fn render_body(scene: Value) -> Value {
    let (intr, pose) = view();
    json!({"scene": scene, "pose": pose, "intrinsics": intr, "revision": 7})
}

#[tokio::test]
async fn render_returns_three_images_matching_the_core_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let scene = demo_room();
    let (status, _, body) = send(
        &app,
        "POST",
        "/v1/render",
        render_body(serde_json::to_value(&scene).unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["revision"], 7);
    assert_eq!(v["scene_id"], scene.content_hash());
    let img = |k: &str| B64.decode(v["images"][k].as_str().unwrap()).unwrap();
    let (intr, pose) = view();
    let cfg = RenderConfig::default();
    let expect = render_scene(&scene, &intr, &pose.into(), &cfg).unwrap();
    let (w, h, ids) = decode_semantic_png(&img("semantic_png")).unwrap();
    assert_eq!((w, h), (48, 32));
    assert_eq!(ids, expect.semantic);
    let (_, _, raw) = decode_depth_png(&img("depth_png")).unwrap();
    for (q, n) in raw.iter().zip(normalize_depth(&expect, &cfg)) {
        assert!((*q as f64 / 65535.0 - n).abs() <= 1.0 / 65535.0);
    }
    let preview = decode_png(&img("preview_png")).unwrap();
    assert_eq!(preview.data.len(), 48 * 32 * 3);
    assert_eq!(v["hit_pixels"], expect.hit_count());
}

#[tokio::test]
async fn bad_category_is_422_with_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let mut scene = demo_room();
    scene.objects[3].category_id = 250;
    let (status, _, body) = send(
        &app,
        "POST",
        "/v1/render",
        render_body(serde_json::to_value(&scene).unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = json_of(&body);
    assert_eq!(v["code"], "INVALID_SCENE");
    assert_eq!(v["errors"][0]["code"], "UNKNOWN_CATEGORY");
    assert_eq!(v["errors"][0]["object_id"], scene.objects[3].object_id);
    let report: bbs_core::scene::ValidationReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(report.error_codes(), vec!["UNKNOWN_CATEGORY"]);
    let (status, _, _) = send(&app, "POST", "/v1/scenes", serde_json::to_value(&scene).unwrap(), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sixteen_concurrent_identical_renders_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let body = render_body(serde_json::to_value(demo_room()).unwrap());
    let mut set = tokio::task::JoinSet::new();
    for i in 0..16 {
        let app = app.clone();
        let body = body.clone();
        let accept = if i % 2 == 0 { None } else { Some("multipart/mixed") };
        set.spawn(async move { (i % 2, send(&app, "POST", "/v1/render", body, accept).await) });
    }
    let mut seen: [Option<Bytes>; 2] = [None, None];
    while let Some(r) = set.join_next().await {
        let (kind, (status, _, bytes)) = r.unwrap();
        assert_eq!(status, StatusCode::OK);
        match &seen[kind] {
            Some(first) => assert_eq!(first, &bytes),
            None => seen[kind] = Some(bytes),
        }
    }
}

#[tokio::test]
async fn multipart_carries_meta_and_png_parts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let scene = demo_room();
    let (status, headers, body) = send(
        &app,
        "POST",
        "/v1/render",
        render_body(serde_json::to_value(&scene).unwrap()),
        Some("multipart/mixed"),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let ct = headers[header::CONTENT_TYPE].to_str().unwrap();
    let boundary = ct.split("boundary=").nth(1).unwrap();
    let delim = format!("--{boundary}");
    let text = body.to_vec();
    let mut starts = Vec::new();
    let mut i = 0;
    while let Some(p) = text[i..].windows(delim.len()).position(|w| w == delim.as_bytes()) {
        starts.push(i + p);
        i += p + delim.len();
    }
    // meta, three images, closing delimiter
    assert_eq!(starts.len(), 5);
    let part = |k: usize| {
        let s = &text[starts[k] + delim.len() + 2..starts[k + 1] - 2];
        let split = s.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
        (
            String::from_utf8_lossy(&s[..split]).into_owned(),
            s[split + 4..].to_vec(),
        )
    };
    let (h0, meta) = part(0);
    assert!(h0.contains("application/json"));
    assert_eq!(json_of(&Bytes::from(meta))["scene_id"], scene.content_hash());
    let (h1, sem) = part(1);
    assert!(h1.contains("name=\"semantic_png\""));
    let (intr, pose) = view();
    let expect = render_scene(&scene, &intr, &pose.into(), &RenderConfig::default()).unwrap();
    assert_eq!(decode_semantic_png(&sem).unwrap().2, expect.semantic);
    assert!(part(2).0.contains("depth_png"));
    assert!(part(3).0.contains("preview_png"));
}

#[tokio::test]
async fn stored_scenes_render_like_inline_ones() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let scene = demo_room();
    let (status, _, body) = send(&app, "POST", "/v1/scenes", serde_json::to_value(&scene).unwrap(), None).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = json_of(&body)["scene_id"].as_str().unwrap().to_string();
    assert_eq!(id, scene.content_hash());
    let (status, _, body) = send(&app, "GET", &format!("/v1/scenes/{id}"), Value::Null, None).await;
    assert_eq!(status, StatusCode::OK);
    let back = bbs_core::scene::BoundingBoxScene::from_json(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(back.content_hash(), id);
    let (intr, pose) = view();
    let by_id = json!({"scene_id": id, "pose": pose, "intrinsics": intr, "revision": 7});
    let (_, _, a) = send(&app, "POST", "/v1/render", by_id, None).await;
    let (_, _, b) = send(
        &app,
        "POST",
        "/v1/render",
        render_body(serde_json::to_value(&scene).unwrap()),
        None,
    )
    .await;
    assert_eq!(a, b);
    let (status, _, body) = send(
        &app,
        "GET",
        &format!("/v1/scenes/{}", "0".repeat(64)),
        Value::Null,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["code"], "SCENE_NOT_FOUND");
    let (status, _, _) = send(&app, "GET", "/v1/scenes/..%2Fjobs", Value::Null, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let both = json!({"scene": scene, "scene_id": id, "pose": pose, "intrinsics": intr});
    let (status, _, body) = send(&app, "POST", "/v1/render", both, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["code"], "BAD_REQUEST");
}

#[tokio::test]
async fn validate_reports_and_rejects_malformed_json() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1 << 24);
    let (status, _, body) = send(
        &app,
        "POST",
        "/v1/validate",
        serde_json::to_value(demo_room()).unwrap(),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["ok"], true);
    let mut bad = demo_room();
    bad.objects[0].category_id = 250;
    let (status, _, body) = send(&app, "POST", "/v1/validate", serde_json::to_value(&bad).unwrap(), None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["ok"], false);
    assert_eq!(v["errors"][0]["code"], "UNKNOWN_CATEGORY");
    let (status, _, body) = send(&app, "POST", "/v1/validate", json!({"objects": 3}), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["code"], "MALFORMED_JSON");
}

#[tokio::test]
async fn voxelize_json_binary_and_cell_cap() {
    let dir = tempfile::tempdir().unwrap();
    let scene = serde_json::to_value(demo_room()).unwrap();
    let req = json!({"scene": scene, "unit": 0.2, "policy": "center"});
    let app_big = app(dir.path(), 1 << 24);
    let (status, _, body) = send(&app_big, "POST", "/v1/voxelize", req.clone(), None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    let grid = VoxelGrid::read_from(B64.decode(v["grid_base64"].as_str().unwrap()).unwrap().as_slice()).unwrap();
    let expect = bbs_core::voxel::voxelize_scene(&demo_room(), 0.2, bbs_core::voxel::OverlapPolicy::Center).unwrap();
    assert_eq!(grid, expect);
    assert_eq!(v["summary"]["occupied"], expect.occupied_count());
    let (status, headers, raw) = send(
        &app_big,
        "POST",
        "/v1/voxelize",
        req.clone(),
        Some("application/octet-stream"),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "application/octet-stream");
    assert_eq!(VoxelGrid::read_from(&raw[..]).unwrap(), expect);
    let small = tempfile::tempdir().unwrap();
    let (status, _, body) = send(&app(small.path(), 100), "POST", "/v1/voxelize", req, None).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(json_of(&body)["code"], "GRID_TOO_LARGE");
}

async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (status, _, body) = send(app, "GET", &format!("/v1/jobs/{id}"), Value::Null, None).await;
        assert_eq!(status, StatusCode::OK);
        let v = json_of(&body);
        if v["status"] == "done" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn convert_then_simulate_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    for r in source_corpus(2, 6, 24, 16) {
        std::fs::write(
            input.join(format!("{}.json", r.scene_id)),
            serde_json::to_string(&r).unwrap(),
        )
        .unwrap();
    }
    let app = app(dir.path(), 1 << 24);
    let (status, _, body) = send(
        &app,
        "POST",
        "/v1/jobs/convert",
        json!({"input": "input", "rules": {"min_frames": 6}, "seed": 3}),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = json_of(&body)["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&app, &id).await;
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["kind"], "convert");
    assert_eq!(job["result"]["entries"], 12);
    let manifest = job["artifacts"][0].as_str().unwrap().to_string();
    assert!(std::path::Path::new(&manifest).exists());

    let (_, _, body) = send(
        &app,
        "POST",
        "/v1/jobs/simulate",
        json!({"dataset": manifest, "iters": 60, "seed": 5}),
        None,
    )
    .await;
    let id = json_of(&body)["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&app, &id).await;
    assert_eq!(job["status"], "done", "{job}");
    let r = &job["result"];
    assert!(r["final_error"].as_f64().unwrap() < r["initial_error"].as_f64().unwrap());
    let report: bbs_cli::ops::SimulateReport =
        serde_json::from_str(&std::fs::read_to_string(job["artifacts"][0].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(report.steps.len(), 60);
    assert!(!report.events.is_empty());
    assert!(job["timings"]["elapsed_ms"].is_u64());

    let (_, _, body) = send(
        &app,
        "POST",
        "/v1/jobs/simulate",
        json!({"dataset": "missing.json", "iters": 5}),
        None,
    )
    .await;
    let id = json_of(&body)["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&app, &id).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["code"], "IO_ERROR");

    let (status, _, body) = send(&app, "GET", "/v1/jobs/job-999999", Value::Null, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["code"], "JOB_NOT_FOUND");
}
