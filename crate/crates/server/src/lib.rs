//! HTTP labeling and teleoperation server.
//!
//! Routes (JSON bodies, errors as `{code, message}`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/config` | action deltas and class table |
//! | POST | `/sessions` | create from `{scenario, seed, mode}`, a replay log, or a snapshot |
//! | GET | `/sessions/{id}/frame` | current frame, PNG as base64 |
//! | GET | `/sessions/{id}/frame.png` | current frame as `image/png` |
//! | POST | `/sessions/{id}/label` | `{c_yaw, c_pitch, step?}` |
//! | POST | `/sessions/{id}/action` | `{c_yaw, c_pitch, record?, step?}` |
//! | POST | `/sessions/{id}/export` | `{path?}` |
//! | GET | `/sessions/{id}/stats` | |
//! | POST | `/sessions/{id}/snapshot` | |
//! | DELETE | `/sessions/{id}` | |
//!
//! Anything else is served from the static UI directory when one is set.

mod error;
mod session;

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::services::ServeDir;

use segnav_core::policy::{decode_action, DEFAULT_DELTA_DEG, NUM_CLASSES};
use segnav_core::sensor::CameraModel;
use segnav_core::simulate::{EpisodeLog, SimParams};
use segnav_core::world::{ScenarioId, ScenarioParams, ScenarioSpec};

pub use error::{ApiError, ApiResult};
pub use session::{
    ExportSummary, FramePayload, Mode, ResetReason, Session, Snapshot, SnapshotLabel, Stats, SNAPSHOT_FORMAT,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub camera: CameraModel,
    pub sim: SimParams,
    /// Side of the images stored with labels.
    pub image_size: u32,
    pub delta_yaw_deg: f64,
    pub delta_pitch_deg: f64,
    /// Minimum spacing of accepted teleop actions per session.
    pub action_interval: Duration,
    /// Root for exports, snapshots and replay logs. Request paths are
    /// relative to it and may not climb out.
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    /// Embedded in exported dataset headers.
    pub config_hash: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            sim: SimParams::default(),
            image_size: 64,
            delta_yaw_deg: DEFAULT_DELTA_DEG,
            delta_pitch_deg: DEFAULT_DELTA_DEG,
            action_interval: Duration::from_millis(250),
            data_dir: PathBuf::from("."),
            static_dir: None,
            config_hash: String::new(),
        }
    }
}

type SessionHandle = Arc<Mutex<Session>>;

struct Inner {
    config: ServerConfig,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    counter: AtomicU64,
    id_key: RandomState,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
            id_key: RandomState::new(),
        }))
    }

    pub fn config(&self) -> &ServerConfig {
        &self.0.config
    }

    fn fresh_id(&self) -> String {
        let n = self.0.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}{:04x}", self.0.id_key.hash_one(n), n & 0xffff)
    }

    async fn get(&self, id: &str) -> ApiResult<SessionHandle> {
        self.0
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    async fn insert(&self, s: Session) -> String {
        let id = s.id.clone();
        self.0.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(s)));
        id
    }
}

/// Runs `f` on the locked session off the async threads; rendering is CPU
/// bound. The lock is held for the whole call, so requests to one session
/// are applied one at a time.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &ServerConfig) -> ApiResult<T> + Send + 'static,
{
    let handle = state.get(id).await?;
    let mut guard = handle.lock_owned().await;
    let st = state.clone();
    tokio::task::spawn_blocking(move || f(&mut guard, st.config()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Resolves a client-supplied relative path under the data directory.
fn data_path(cfg: &ServerConfig, rel: &str) -> ApiResult<PathBuf> {
    let p = Path::new(rel);
    if rel.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ApiError::bad_request(format!("path {rel:?} must be relative without `..`")));
    }
    Ok(cfg.data_dir.join(p))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    scenario: Option<String>,
    #[serde(default)]
    seed: u64,
    mode: Option<Mode>,
    params: Option<ScenarioParams>,
    /// Episode log to relabel, relative to the data directory.
    replay_log: Option<String>,
    /// Snapshot to restore, relative to the data directory.
    snapshot: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub frame: FramePayload,
}

async fn create(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Created>> {
    let req: CreateRequest = parse_body(&body)?;
    let id = state.fresh_id();
    let st = state.clone();
    let session = tokio::task::spawn_blocking(move || build_session(id, req, st.config()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let frame = session.payload();
    let session_id = state.insert(session).await;
    Ok(Json(Created { session_id, frame }))
}

fn build_session(id: String, req: CreateRequest, cfg: &ServerConfig) -> ApiResult<Session> {
    if let Some(rel) = &req.snapshot {
        let text = std::fs::read_to_string(data_path(cfg, rel)?)
            .map_err(|e| ApiError::bad_request(format!("snapshot {rel}: {e}")))?;
        let snap: Snapshot =
            serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("snapshot {rel}: {e}")))?;
        return Session::restore(id, &snap, cfg);
    }
    let name = req.scenario.as_deref().ok_or_else(|| ApiError::bad_request("missing scenario"))?;
    let scenario: ScenarioId = name.parse().map_err(|e: segnav_core::world::WorldError| ApiError::bad_request(e.to_string()))?;
    let spec = ScenarioSpec::new(scenario, req.seed).with_params(req.params.unwrap_or_default());
    let mode = req.mode.unwrap_or(if req.replay_log.is_some() { Mode::Replay } else { Mode::Label });
    match (mode, &req.replay_log) {
        (Mode::Replay, Some(rel)) => {
            let file = std::fs::File::open(data_path(cfg, rel)?)
                .map_err(|e| ApiError::bad_request(format!("replay log {rel}: {e}")))?;
            let log = EpisodeLog::read_jsonl(std::io::BufReader::new(file))
                .map_err(|e| ApiError::bad_request(format!("replay log {rel}: {e}")))?;
            Session::replay(id, spec, &log, cfg)
        }
        (Mode::Replay, None) => Err(ApiError::bad_request("replay mode needs replay_log")),
        (_, Some(_)) => Err(ApiError::bad_request("replay_log is only valid in replay mode")),
        (mode, None) => Session::new(id, mode, spec, cfg),
    }
}

async fn frame(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<FramePayload>> {
    Ok(Json(with_session(&state, &id, |s, _| Ok(s.payload())).await?))
}

async fn frame_png(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let png = with_session(&state, &id, |s, _| Ok(s.png().to_vec())).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    c_yaw: i64,
    c_pitch: i64,
    step: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRequest {
    c_yaw: i64,
    c_pitch: i64,
    #[serde(default)]
    record: bool,
    step: Option<u64>,
}

async fn label(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<FramePayload>> {
    let req: LabelRequest = parse_body(&body)?;
    let (cy, cp) = session::parse_classes(req.c_yaw, req.c_pitch)?;
    Ok(Json(with_session(&state, &id, move |s, cfg| s.label(cy, cp, req.step, cfg)).await?))
}

async fn action(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<FramePayload>> {
    let req: ActionRequest = parse_body(&body)?;
    let (cy, cp) = session::parse_classes(req.c_yaw, req.c_pitch)?;
    let payload = with_session(&state, &id, move |s, cfg| {
        let now = Instant::now();
        if s.mode == Mode::Teleop {
            if let Some(last) = s.last_action {
                if now.duration_since(last) < cfg.action_interval {
                    return Err(ApiError::new(
                        StatusCode::TOO_MANY_REQUESTS,
                        "rate_limited",
                        format!("at most one action per {} ms", cfg.action_interval.as_millis()),
                    ));
                }
            }
        }
        let out = s.teleop(cy, cp, req.record, req.step, cfg)?;
        s.last_action = Some(now);
        Ok(out)
    })
    .await?;
    Ok(Json(payload))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    path: Option<String>,
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<ExportSummary>> {
    let req: ExportRequest = parse_body(&body)?;
    let rel = req.path.unwrap_or_else(|| format!("exports/{id}"));
    let dir = data_path(state.config(), &rel)?;
    Ok(Json(with_session(&state, &id, move |s, cfg| s.export(&dir, rel, cfg)).await?))
}

async fn stats(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Stats>> {
    Ok(Json(with_session(&state, &id, |s, _| Ok(s.stats())).await?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotSaved {
    pub path: String,
}

async fn snapshot(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SnapshotSaved>> {
    let rel = format!("snapshots/{id}.json");
    let file = data_path(state.config(), &rel)?;
    with_session(&state, &id, move |s, _| {
        let snap = s.snapshot()?;
        let text = serde_json::to_string_pretty(&snap).map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(dir) = file.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        std::fs::write(&file, text + "\n").map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(Json(SnapshotSaved { path: rel }))
}

async fn delete(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    match state.0.sessions.write().await.remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("no session {id}"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClientConfig {
    pub delta_yaw_deg: f64,
    pub delta_pitch_deg: f64,
    /// Heading change per yaw class, degrees.
    pub yaw_degrees: [f64; NUM_CLASSES],
    /// Pitch change per pitch class, degrees.
    pub pitch_degrees: [f64; NUM_CLASSES],
    pub action_interval_ms: u64,
    pub scenarios: Vec<String>,
}

async fn client_config(State(state): State<AppState>) -> Json<ClientConfig> {
    let cfg = state.config();
    let table = |delta: f64| {
        let mut t = [0.0; NUM_CLASSES];
        for (c, v) in t.iter_mut().enumerate() {
            *v = decode_action(c as u8, delta).expect("class in range");
        }
        t
    };
    Json(ClientConfig {
        delta_yaw_deg: cfg.delta_yaw_deg,
        delta_pitch_deg: cfg.delta_pitch_deg,
        yaw_degrees: table(cfg.delta_yaw_deg),
        pitch_degrees: table(cfg.delta_pitch_deg),
        action_interval_ms: cfg.action_interval.as_millis() as u64,
        scenarios: ScenarioId::ALL.iter().map(|s| s.as_str().to_string()).collect(),
    })
}

async fn no_route() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.config().static_dir.clone();
    let api = Router::new()
        .route("/config", get(client_config))
        .route("/sessions", post(create))
        .route("/sessions/{id}", axum::routing::delete(delete))
        .route("/sessions/{id}/frame", get(frame))
        .route("/sessions/{id}/frame.png", get(frame_png))
        .route("/sessions/{id}/label", post(label))
        .route("/sessions/{id}/action", post(action))
        .route("/sessions/{id}/export", post(export))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/snapshot", post(snapshot))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(no_route),
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: std::net::SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}
