use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

use segnav_core::policy::{load_dataset, train_bc, Architecture, TrainConfig};
use segnav_core::sensor::CameraModel;
use segnav_core::simulate::{run_episode, EpisodeMeta, ExpertController, SimParams};
use segnav_core::world::{generate_scenario, ScenarioId, ScenarioSpec};
use segnav_server::{router, AppState, ServerConfig};

fn config(dir: &std::path::Path, interval_ms: u64) -> ServerConfig {
    ServerConfig {
        camera: CameraModel { image_w: 64, image_h: 64, ..CameraModel::default() },
        image_size: 32,
        action_interval: Duration::from_millis(interval_ms),
        data_dir: dir.to_path_buf(),
        ..ServerConfig::default()
    }
}

fn app(dir: &std::path::Path, interval_ms: u64) -> Router {
    router(AppState::new(config(dir, interval_ms)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, bytes, ctype)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = call(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = json_call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn sessions_are_created_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let a = create(&app, json!({"scenario": "e_shape", "seed": 0, "mode": "label"})).await;
    let b = create(&app, json!({"scenario": "eshape", "seed": 0})).await;
    assert_ne!(a, b);
    let (status, v) = json_call(&app, "POST", "/sessions", Some(json!({"scenario": "kelp_forest"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let (status, v) = json_call(&app, "POST", "/sessions", Some(json!({"scenario": "e_shape", "colour": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let (status, v) = json_call(&app, "GET", "/sessions/nope/frame", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
    let (status, _) = json_call(&app, "DELETE", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = json_call(&app, "GET", &format!("/sessions/{a}/stats"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frames_are_idempotent_and_expose_only_the_composed_image() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let id = create(&app, json!({"scenario": "rock_reef", "seed": 1})).await;
    let (s1, f1, _) = call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
    let (s2, f2, _) = call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(f1, f2);
    let v: Value = serde_json::from_slice(&f1).unwrap();
    assert_eq!(v["step"], 0);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for banned in ["seg", "depth", "ooi_kind", "seg_mask", "depth_image"] {
        assert!(!keys.contains(&banned), "payload exposes {banned}");
    }
    assert!(!String::from_utf8_lossy(&f1).contains("ooi"));
    let (status, png, ctype) = call(&app, "GET", &format!("/sessions/{id}/frame.png"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let b64 = base64::engine::general_purpose::STANDARD.decode(v["png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(png, b64);
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

#[tokio::test]
async fn labels_steer_and_are_stored_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let id = create(&app, json!({"scenario": "grid_world", "seed": 0})).await;
    let (_, f0) = json_call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
    let (status, f1) =
        json_call(&app, "POST", &format!("/sessions/{id}/label"), Some(json!({"c_yaw": 3, "c_pitch": 3, "step": 0})))
            .await;
    assert_eq!(status, StatusCode::OK, "{f1}");
    assert_eq!(f1["step"], 1);
    let (p0, p1) = (&f0["pose"], &f1["pose"]);
    let moved = (p1["x"].as_f64().unwrap() - p0["x"].as_f64().unwrap())
        .hypot(p1["y"].as_f64().unwrap() - p0["y"].as_f64().unwrap());
    assert!((moved - 2.0).abs() < 1e-9);
    assert_eq!(p1["yaw_deg"], p0["yaw_deg"]);
    assert_eq!(p1["z"], p0["z"]);

    let url = format!("/sessions/{id}/label");
    let (status, v) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3, "step": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "already_labeled");
    let (status, v) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3, "step": 7}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "stale_step");
    let (status, v) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 9, "c_pitch": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let (status, _) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 2, "c_pitch": -1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = json_call(&app, "POST", &format!("/sessions/{id}/action"), Some(json!({"c_yaw": 3, "c_pitch": 3}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "wrong_mode");

    for k in 0..4 {
        json_call(&app, "POST", &url, Some(json!({"c_yaw": k, "c_pitch": 3}))).await;
    }
    let (_, stats) = json_call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["labels"], 5);
    assert_eq!(stats["step"], 5);
}

#[tokio::test]
async fn exported_labels_form_a_trainable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let id = create(&app, json!({"scenario": "e_shape", "seed": 2})).await;
    let (status, v) = json_call(&app, "POST", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "no_labels");

    let mut want_yaw = [0usize; 7];
    let mut want_pitch = [0usize; 7];
    for k in 0..50u64 {
        let (cy, cp) = ((k * 3 % 7) as u8, (k % 5 + 1) as u8);
        want_yaw[cy as usize] += 1;
        want_pitch[cp as usize] += 1;
        let (status, f) = json_call(
            &app,
            "POST",
            &format!("/sessions/{id}/label"),
            Some(json!({"c_yaw": cy, "c_pitch": cp, "step": k})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{f}");
    }
    let (_, stats) = json_call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["yaw_histogram"], json!(want_yaw));
    assert_eq!(stats["pitch_histogram"], json!(want_pitch));

    let (status, v) =
        json_call(&app, "POST", &format!("/sessions/{id}/export"), Some(json!({"path": "../escape"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");

    let (status, summary) =
        json_call(&app, "POST", &format!("/sessions/{id}/export"), Some(json!({"path": "sets/one"}))).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    assert_eq!(summary["samples"], 50);
    assert_eq!(summary["yaw_histogram"], json!(want_yaw));
    let sum: u64 = summary["pitch_histogram"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(sum, 50);

    let out = dir.path().join("sets/one");
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 50);
    assert_eq!(std::fs::read_dir(out.join("images")).unwrap().count(), 50);
    let (samples, meta) = load_dataset(&out).unwrap();
    assert_eq!(meta.unwrap().yaw_histogram, want_yaw);
    assert!(samples.iter().enumerate().all(|(k, s)| s.step == k as u64));
    let arch = Architecture { input_w: 32, input_h: 32, ..Architecture::default() };
    train_bc(arch, &samples, &[], &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
}

#[tokio::test]
async fn teleop_actions_are_rate_limited() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 250);
    let id = create(&app, json!({"scenario": "grid_world", "seed": 0, "mode": "teleop"})).await;
    let url = format!("/sessions/{id}/action");
    let (status, _) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, v) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3}))).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    assert_error(&v, "rate_limited");
    tokio::time::sleep(Duration::from_millis(260)).await;
    let (status, f) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3, "record": true}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(f["step"], 2);
    assert_eq!(f["labels"], 1);
    let (status, v) = json_call(&app, "POST", &format!("/sessions/{id}/label"), Some(json!({"c_yaw": 3, "c_pitch": 3}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "wrong_mode");
}

#[tokio::test]
async fn teleop_round_trip_is_fast_and_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServerConfig { action_interval: Duration::ZERO, data_dir: dir.path().to_path_buf(), ..ServerConfig::default() };
    let app = router(AppState::new(cfg));
    let id = create(&app, json!({"scenario": "branching_corridor", "seed": 0, "mode": "teleop"})).await;
    let url = format!("/sessions/{id}/action");
    let mut times = Vec::with_capacity(500);
    for k in 0..500u64 {
        let t = Instant::now();
        let (status, f) =
            json_call(&app, "POST", &url, Some(json!({"c_yaw": (k % 7), "c_pitch": 3, "step": k}))).await;
        times.push(t.elapsed());
        assert_eq!(status, StatusCode::OK, "{f}");
        assert_eq!(f["step"], k + 1);
    }
    times.sort();
    let median = times[times.len() / 2];
    println!("teleop median round trip {median:?}");
    assert!(median < Duration::from_millis(200), "median {median:?}");
    let (_, stats) = json_call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["step"], 500);
    assert_eq!(stats["labels"], 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_to_one_session_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let id = create(&app, json!({"scenario": "e_shape", "seed": 0})).await;
    let other = create(&app, json!({"scenario": "e_shape", "seed": 0})).await;
    let mut tasks = Vec::new();
    for _ in 0..24 {
        let (app, url) = (app.clone(), format!("/sessions/{id}/label"));
        tasks.push(tokio::spawn(async move {
            json_call(&app, "POST", &url, Some(json!({"c_yaw": 3, "c_pitch": 3}))).await
        }));
    }
    let mut steps = Vec::new();
    for t in tasks {
        let (status, f) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        steps.push(f["step"].as_u64().unwrap());
    }
    steps.sort();
    assert_eq!(steps, (1..=24).collect::<Vec<_>>());
    let (_, stats) = json_call(&app, "GET", &format!("/sessions/{other}/stats"), None).await;
    assert_eq!(stats["step"], 0);
}

#[tokio::test]
async fn snapshots_restore_labels_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 0);
    let id = create(&app, json!({"scenario": "disconnected_paths", "seed": 4})).await;
    for k in 0..6 {
        json_call(&app, "POST", &format!("/sessions/{id}/label"), Some(json!({"c_yaw": k, "c_pitch": 2}))).await;
    }
    let (_, before) = json_call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
    let (status, saved) = json_call(&app, "POST", &format!("/sessions/{id}/snapshot"), None).await;
    assert_eq!(status, StatusCode::OK);
    let restored = create(&app, json!({"snapshot": saved["path"]})).await;
    assert_ne!(restored, id);
    let (_, after) = json_call(&app, "GET", &format!("/sessions/{restored}/frame"), None).await;
    assert_eq!(after["step"], before["step"]);
    assert_eq!(after["pose"], before["pose"]);
    assert_eq!(after["png_base64"], before["png_base64"]);
    let (_, a) = json_call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    let (_, b) = json_call(&app, "GET", &format!("/sessions/{restored}/stats"), None).await;
    assert_eq!(a["yaw_histogram"], b["yaw_histogram"]);
    let (status, v) = json_call(&app, "POST", &format!("/sessions/{restored}/label"), Some(json!({"c_yaw": 3, "c_pitch": 3, "step": 5}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "already_labeled");
}

#[tokio::test]
async fn replay_sessions_walk_a_recorded_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0);
    let spec = ScenarioSpec::new(ScenarioId::GridWorld, 3);
    let map = generate_scenario(&spec).unwrap();
    let meta = EpisodeMeta { method: "expert".into(), scenario: "grid_world".into(), seed: 3, world_digest: map.digest() };
    let sim = SimParams { max_steps: 4, ..SimParams::default() };
    let mut expert = ExpertController { config: Default::default() };
    let log = run_episode(&map, map.spawn_pose(), &mut expert, &sim, &cfg.camera, meta).unwrap();
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf, None).unwrap();
    std::fs::write(dir.path().join("ep.jsonl"), buf).unwrap();

    let app = router(AppState::new(cfg));
    let (status, v) =
        json_call(&app, "POST", "/sessions", Some(json!({"scenario": "grid_world", "seed": 4, "replay_log": "ep.jsonl"})))
            .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
    let id = create(&app, json!({"scenario": "grid_world", "seed": 3, "replay_log": "ep.jsonl"})).await;
    let url = format!("/sessions/{id}/label");
    for (k, rec) in log.records.iter().enumerate() {
        let (_, f) = json_call(&app, "GET", &format!("/sessions/{id}/frame"), None).await;
        assert_eq!(f["pose"]["x"].as_f64().unwrap(), rec.pose.x);
        assert_eq!(f["mode"], "replay");
        // Labels do not steer: a hard turn still lands on the recorded pose.
        let (status, f) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 0, "c_pitch": 6}))).await;
        assert_eq!(status, StatusCode::OK, "{f}");
        assert_eq!(f["finished"], k + 1 == log.records.len());
    }
    let (status, v) = json_call(&app, "POST", &url, Some(json!({"c_yaw": 0, "c_pitch": 6}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "replay_finished");
    let (_, stats) = json_call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["labels"], 4);
}

#[tokio::test]
async fn client_config_and_static_files() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>labeler</html>").unwrap();
    let cfg = ServerConfig { static_dir: Some(ui), ..config(dir.path(), 250) };
    let app = router(AppState::new(cfg));
    let (status, v) = json_call(&app, "GET", "/config", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["yaw_degrees"], json!([15.0, 10.0, 5.0, 0.0, -5.0, -10.0, -15.0]));
    assert_eq!(v["action_interval_ms"], 250);
    let (status, body, _) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>labeler</html>");
    let (status, body, _) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>labeler</html>");

    let bare = router(AppState::new(config(dir.path(), 0)));
    let (status, v) = json_call(&bare, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}
