//! Session state: one simulated robot, its current frame, and the labels
//! collected so far. Everything here is synchronous; the HTTP layer
//! serializes access per session.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use segnav_core::ir::downsample;
use segnav_core::policy::{
    write_dataset, ActionClass, DatasetMeta, LabeledSample, Provenance, NUM_CLASSES,
};
use segnav_core::sensor::{render, RobotPose};
use segnav_core::simulate::{check_collision, step_dynamics, EpisodeLog};
use segnav_core::world::{generate_scenario, ScenarioSpec, WorldMap};
use segnav_core::SegDepthImage;

use crate::error::{ApiError, ApiResult};
use crate::ServerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every label is stored and steers the robot.
    Label,
    /// Actions steer the robot; stored only when flagged.
    Teleop,
    /// Walks the poses of a recorded episode; labels do not steer.
    Replay,
}

/// Why the pose jumped back to spawn on the last step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetReason {
    OutOfBounds,
    Collision,
}

/// What a client sees of the current frame. Only the composed image, never
/// the planes behind it or the map's object tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub session_id: String,
    pub mode: Mode,
    pub scenario: String,
    pub seed: u64,
    pub step: u64,
    pub pose: RobotPose,
    pub image_width: u32,
    pub image_height: u32,
    pub png_base64: String,
    pub labels: usize,
    /// Set when the previous move left the map or collided.
    pub reset: Option<ResetReason>,
    /// Replay sessions: no recorded poses remain.
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub session_id: String,
    pub mode: Mode,
    pub step: u64,
    pub labels: usize,
    pub resets: u64,
    pub yaw_histogram: [usize; NUM_CLASSES],
    pub pitch_histogram: [usize; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: String,
    pub samples: usize,
    pub yaw_histogram: [usize; NUM_CLASSES],
    pub pitch_histogram: [usize; NUM_CLASSES],
}

struct CurrentFrame {
    png: Vec<u8>,
    /// Downsampled copy stored with a label.
    sample: SegDepthImage,
    width: u32,
    height: u32,
}

pub struct Session {
    pub id: String,
    pub mode: Mode,
    pub spec: ScenarioSpec,
    map: Arc<WorldMap>,
    pose: RobotPose,
    step: u64,
    frame: CurrentFrame,
    labels: Vec<LabeledSample>,
    labeled_steps: BTreeSet<u64>,
    replay: Vec<RobotPose>,
    replay_index: usize,
    resets: u64,
    last_reset: Option<ResetReason>,
    pub(crate) last_action: Option<Instant>,
}

fn render_frame(map: &WorldMap, pose: &RobotPose, cfg: &ServerConfig) -> ApiResult<CurrentFrame> {
    let mut frame = render(map, pose, &cfg.camera).map_err(|e| ApiError::internal(e.to_string()))?;
    let sd = frame.compose().clone();
    let png = sd.to_png().map_err(|e| ApiError::internal(e.to_string()))?;
    let sample = downsample(&sd, cfg.image_size, cfg.image_size).map_err(|e| ApiError::internal(e.to_string()))?;
    let (width, height) = sd.dimensions();
    Ok(CurrentFrame { png, sample, width, height })
}

fn check_class(name: &str, c: i64) -> ApiResult<u8> {
    if (0..NUM_CLASSES as i64).contains(&c) {
        Ok(c as u8)
    } else {
        Err(ApiError::bad_request(format!("{name} must be in 0..=6, got {c}")))
    }
}

/// Validated (c_yaw, c_pitch) from a request body.
pub fn parse_classes(c_yaw: i64, c_pitch: i64) -> ApiResult<(u8, u8)> {
    Ok((check_class("c_yaw", c_yaw)?, check_class("c_pitch", c_pitch)?))
}

impl Session {
    pub fn new(id: String, mode: Mode, spec: ScenarioSpec, cfg: &ServerConfig) -> ApiResult<Self> {
        let map = generate_scenario(&spec).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let pose = map.spawn_pose();
        Self::at(id, mode, spec, Arc::new(map), pose, 0, cfg)
    }

    fn at(
        id: String,
        mode: Mode,
        spec: ScenarioSpec,
        map: Arc<WorldMap>,
        pose: RobotPose,
        step: u64,
        cfg: &ServerConfig,
    ) -> ApiResult<Self> {
        let frame = render_frame(&map, &pose, cfg)?;
        Ok(Self {
            id,
            mode,
            spec,
            map,
            pose,
            step,
            frame,
            labels: Vec::new(),
            labeled_steps: BTreeSet::new(),
            replay: Vec::new(),
            replay_index: 0,
            resets: 0,
            last_reset: None,
            last_action: None,
        })
    }

    /// Replay session over the poses of a recorded episode on the same world.
    pub fn replay(id: String, spec: ScenarioSpec, log: &EpisodeLog, cfg: &ServerConfig) -> ApiResult<Self> {
        let map = generate_scenario(&spec).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if log.meta.world_digest != map.digest() {
            return Err(ApiError::bad_request("episode log was recorded on a different world"));
        }
        let poses: Vec<RobotPose> = log.records.iter().map(|r| r.pose).collect();
        let Some(&first) = poses.first() else {
            return Err(ApiError::bad_request("episode log has no steps"));
        };
        let mut s = Self::at(id, Mode::Replay, spec, Arc::new(map), first, 0, cfg)?;
        s.replay = poses;
        Ok(s)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn png(&self) -> &[u8] {
        &self.frame.png
    }

    pub fn labels(&self) -> &[LabeledSample] {
        &self.labels
    }

    fn at_last_pose(&self) -> bool {
        self.mode == Mode::Replay && self.replay_index + 1 >= self.replay.len()
    }

    /// Replay sessions: the last recorded frame is labeled.
    fn finished(&self) -> bool {
        self.at_last_pose() && self.labeled_steps.contains(&self.step)
    }

    pub fn payload(&self) -> FramePayload {
        FramePayload {
            session_id: self.id.clone(),
            mode: self.mode,
            scenario: self.spec.scenario_id.as_str().to_string(),
            seed: self.spec.seed,
            step: self.step,
            pose: self.pose,
            image_width: self.frame.width,
            image_height: self.frame.height,
            png_base64: B64.encode(&self.frame.png),
            labels: self.labels.len(),
            reset: self.last_reset,
            finished: self.finished(),
        }
    }

    fn histograms(&self) -> ([usize; NUM_CLASSES], [usize; NUM_CLASSES]) {
        let mut yaw = [0; NUM_CLASSES];
        let mut pitch = [0; NUM_CLASSES];
        for s in &self.labels {
            yaw[s.c_yaw as usize] += 1;
            pitch[s.c_pitch as usize] += 1;
        }
        (yaw, pitch)
    }

    pub fn stats(&self) -> Stats {
        let (yaw_histogram, pitch_histogram) = self.histograms();
        Stats {
            session_id: self.id.clone(),
            mode: self.mode,
            step: self.step,
            labels: self.labels.len(),
            resets: self.resets,
            yaw_histogram,
            pitch_histogram,
        }
    }

    fn check_step(&self, step: Option<u64>) -> ApiResult<()> {
        match step {
            Some(s) if self.labeled_steps.contains(&s) => {
                Err(ApiError::conflict("already_labeled", format!("step {s} is already labeled")))
            }
            Some(s) if s != self.step => {
                Err(ApiError::conflict("stale_step", format!("step {s} is not the current step {}", self.step)))
            }
            _ => Ok(()),
        }
    }

    fn record(&mut self, c_yaw: u8, c_pitch: u8) {
        self.labels.push(LabeledSample {
            image: self.frame.sample.clone(),
            c_yaw,
            c_pitch,
            provenance: Provenance::Human,
            scenario_id: Some(self.spec.scenario_id.as_str().to_string()),
            step: self.step,
        });
        self.labeled_steps.insert(self.step);
    }

    /// Moves to the next state and renders it. A move that leaves the map
    /// or collides puts the robot back at spawn.
    fn advance(&mut self, action: &ActionClass, cfg: &ServerConfig) -> ApiResult<()> {
        let (pose, reset) = if self.mode == Mode::Replay {
            self.replay_index += 1;
            (self.replay[self.replay_index], None)
        } else {
            let next = step_dynamics(&self.pose, action, &cfg.sim);
            if self.map.cell_at(next.x, next.y).is_err() {
                (self.map.spawn_pose(), Some(ResetReason::OutOfBounds))
            } else if check_collision(&self.map, &next, &cfg.sim) {
                (self.map.spawn_pose(), Some(ResetReason::Collision))
            } else {
                (next, None)
            }
        };
        let frame = render_frame(&self.map, &pose, cfg)?;
        self.pose = pose;
        self.frame = frame;
        self.step += 1;
        self.last_reset = reset;
        if reset.is_some() {
            self.resets += 1;
        }
        Ok(())
    }

    fn action(&self, c_yaw: u8, c_pitch: u8, cfg: &ServerConfig) -> ApiResult<ActionClass> {
        ActionClass::with_deltas(c_yaw, c_pitch, cfg.delta_yaw_deg, cfg.delta_pitch_deg)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }

    /// Stores a label for the current frame and advances.
    pub fn label(&mut self, c_yaw: u8, c_pitch: u8, step: Option<u64>, cfg: &ServerConfig) -> ApiResult<FramePayload> {
        if self.mode == Mode::Teleop {
            return Err(ApiError::conflict("wrong_mode", "labels are not accepted by a teleop session"));
        }
        self.check_step(step)?;
        if self.finished() {
            return Err(ApiError::conflict("replay_finished", "every recorded frame is labeled"));
        }
        let action = self.action(c_yaw, c_pitch, cfg)?;
        self.record(c_yaw, c_pitch);
        if !self.at_last_pose() {
            self.advance(&action, cfg)?;
        }
        Ok(self.payload())
    }

    /// Applies a teleop action, storing it as a label when `record` is set.
    pub fn teleop(
        &mut self,
        c_yaw: u8,
        c_pitch: u8,
        record: bool,
        step: Option<u64>,
        cfg: &ServerConfig,
    ) -> ApiResult<FramePayload> {
        if self.mode != Mode::Teleop {
            return Err(ApiError::conflict("wrong_mode", "actions are only accepted by a teleop session"));
        }
        if let Some(s) = step {
            if s != self.step {
                return Err(ApiError::conflict("stale_step", format!("step {s} is not the current step {}", self.step)));
            }
        }
        let action = self.action(c_yaw, c_pitch, cfg)?;
        if record {
            self.record(c_yaw, c_pitch);
        }
        self.advance(&action, cfg)?;
        Ok(self.payload())
    }

    /// Writes the labels as a dataset directory.
    pub fn export(&self, dir: &Path, shown_path: String, cfg: &ServerConfig) -> ApiResult<ExportSummary> {
        if self.labels.is_empty() {
            return Err(ApiError::conflict("no_labels", "session has no labels to export"));
        }
        let meta = DatasetMeta::describe(&self.labels, segnav_core::TOOL_VERSION, &cfg.config_hash, self.spec.seed);
        write_dataset(dir, &self.labels, &meta).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(ExportSummary {
            path: shown_path,
            samples: self.labels.len(),
            yaw_histogram: meta.yaw_histogram,
            pitch_histogram: meta.pitch_histogram,
        })
    }

    pub fn snapshot(&self) -> ApiResult<Snapshot> {
        let mut labels = Vec::with_capacity(self.labels.len());
        for s in &self.labels {
            let png = s.image.to_png().map_err(|e| ApiError::internal(e.to_string()))?;
            labels.push(SnapshotLabel {
                step: s.step,
                c_yaw: s.c_yaw,
                c_pitch: s.c_pitch,
                provenance: s.provenance,
                png_base64: B64.encode(png),
            });
        }
        Ok(Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            mode: self.mode,
            spec: self.spec,
            pose: self.pose,
            step: self.step,
            resets: self.resets,
            replay: self.replay.clone(),
            replay_index: self.replay_index,
            labels,
        })
    }

    /// Rebuilds a session from a snapshot under a new id.
    pub fn restore(id: String, snap: &Snapshot, cfg: &ServerConfig) -> ApiResult<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(ApiError::bad_request(format!("unsupported snapshot format {:?}", snap.format)));
        }
        let map = generate_scenario(&snap.spec).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if snap.mode == Mode::Replay && snap.replay_index >= snap.replay.len() {
            return Err(ApiError::bad_request("snapshot replay index out of range"));
        }
        let mut s = Self::at(id, snap.mode, snap.spec, Arc::new(map), snap.pose, snap.step, cfg)?;
        s.resets = snap.resets;
        s.replay = snap.replay.clone();
        s.replay_index = snap.replay_index;
        for l in &snap.labels {
            let (c_yaw, c_pitch) = parse_classes(l.c_yaw as i64, l.c_pitch as i64)?;
            let bytes = B64.decode(&l.png_base64).map_err(|e| ApiError::bad_request(e.to_string()))?;
            let image = SegDepthImage::from_png(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
            let past = l.step < snap.step || (snap.mode == Mode::Replay && l.step == snap.step);
            if !past || !s.labeled_steps.insert(l.step) {
                return Err(ApiError::bad_request(format!("snapshot label step {} is invalid", l.step)));
            }
            s.labels.push(LabeledSample {
                image,
                c_yaw,
                c_pitch,
                provenance: l.provenance,
                scenario_id: Some(snap.spec.scenario_id.as_str().to_string()),
                step: l.step,
            });
        }
        Ok(s)
    }
}

pub const SNAPSHOT_FORMAT: &str = "segnav-session/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotLabel {
    pub step: u64,
    pub c_yaw: u8,
    pub c_pitch: u8,
    pub provenance: Provenance,
    pub png_base64: String,
}

/// On-disk session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format: String,
    pub mode: Mode,
    pub spec: ScenarioSpec,
    pub pose: RobotPose,
    pub step: u64,
    pub resets: u64,
    pub replay: Vec<RobotPose>,
    pub replay_index: usize,
    pub labels: Vec<SnapshotLabel>,
}
