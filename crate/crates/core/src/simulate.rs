//! Closed-loop episodes: sense, compose, decide, move, record.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{dist, PlannedPath};
use crate::ir::{downsample, SegDepthImage};
use crate::policy::{
    decode_action, expert_policy, ActionClass, ExpertConfig, LabeledSample, PolicyError, PolicyModel, Provenance,
};
use crate::sensor::{
    footprint_from_hits, normalize_yaw, render_with_hits, CameraModel, Frame, RobotPose, SensorError, PITCH_LIMIT_DEG,
};
use crate::world::WorldMap;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("sensor: {0}")]
    Sensor(#[from] SensorError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("controller {name} failed at step {step}: {reason}")]
    Controller { name: String, step: usize, reason: String },
    #[error("episode log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Forward speed, m/s.
    pub speed: f64,
    /// Control period, s.
    pub control_dt: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub collision_radius: f64,
    pub max_steps: usize,
    /// Stop before a step would push the travelled distance past this, m.
    pub distance_budget: Option<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            speed: 1.0,
            control_dt: 2.0,
            z_min: 3.0,
            z_max: 12.0,
            collision_radius: 0.3,
            max_steps: 1000,
            distance_budget: None,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.control_dt > 0.0 && self.z_min < self.z_max && self.collision_radius >= 0.0) {
            return Err(SimError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn step_length(&self) -> f64 {
        self.speed * self.control_dt
    }
}

/// Applies a discrete action: turn, pitch, then move `v·dt` along the new
/// attitude. Altitude is clamped to `[z_min, z_max]`; horizontal motion is
/// kept when the clamp bites.
pub fn step_dynamics(pose: &RobotPose, action: &ActionClass, params: &SimParams) -> RobotPose {
    let yaw = normalize_yaw(pose.yaw_deg + decode_action(action.c_yaw, action.delta_yaw_deg).unwrap_or(0.0));
    let pitch = (pose.pitch_deg + decode_action(action.c_pitch, action.delta_pitch_deg).unwrap_or(0.0))
        .clamp(-PITCH_LIMIT_DEG, PITCH_LIMIT_DEG);
    let next = RobotPose::new(pose.x, pose.y, pose.z, yaw, pitch);
    let (hx, hy) = next.heading();
    let l = params.step_length();
    let (sp, cp) = pitch.to_radians().sin_cos();
    RobotPose {
        x: pose.x + l * cp * hx,
        y: pose.y + l * cp * hy,
        z: (pose.z + l * sp).clamp(params.z_min, params.z_max),
        ..next
    }
}

/// True when terrain within `collision_radius` horizontally of the robot
/// reaches within `collision_radius` below its altitude (inclusive).
pub fn check_collision(map: &WorldMap, pose: &RobotPose, params: &SimParams) -> bool {
    let r = params.collision_radius;
    let c = map.cell_size();
    let c0 = ((pose.x - r) / c).floor().max(0.0) as usize;
    let r0 = ((pose.y - r) / c).floor().max(0.0) as usize;
    let c1 = (((pose.x + r) / c).floor() as usize).min(map.cols() - 1);
    let r1 = (((pose.y + r) / c).floor() as usize).min(map.rows() - 1);
    for row in r0..=r1 {
        for col in c0..=c1 {
            let nx = pose.x.clamp(col as f64 * c, (col + 1) as f64 * c);
            let ny = pose.y.clamp(row as f64 * c, (row + 1) as f64 * c);
            if (nx - pose.x).hypot(ny - pose.y) <= r {
                let h = map.height_at(crate::world::CellIndex { col, row }) as f64;
                if h >= pose.z - r {
                    return true;
                }
            }
        }
    }
    false
}

/// What a controller is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sensing {
    /// Segmentation and depth planes (the expert labeler).
    Frame,
    /// The composed SegDepth image only.
    SegDepth,
    /// The robot pose (map-based baselines).
    Pose,
}

pub enum Observation<'a> {
    Frame(&'a Frame),
    SegDepth(&'a SegDepthImage),
    Pose(&'a RobotPose),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Discrete yaw/pitch change followed by a full step.
    Action(ActionClass),
    /// Fly straight toward a point at the current altitude, at most one step.
    GoTo { x: f64, y: f64 },
    /// Nothing left to do.
    Stop,
}

pub trait Controller {
    fn name(&self) -> &str;
    fn sensing(&self) -> Sensing;
    fn act(&mut self, obs: Observation<'_>) -> std::result::Result<Command, String>;
}

/// The rule-based expert reading seg and depth.
#[derive(Debug, Clone)]
pub struct ExpertController {
    pub config: ExpertConfig,
}

impl Controller for ExpertController {
    fn name(&self) -> &str {
        "expert"
    }
    fn sensing(&self) -> Sensing {
        Sensing::Frame
    }
    fn act(&mut self, obs: Observation<'_>) -> std::result::Result<Command, String> {
        let Observation::Frame(f) = obs else { return Err("expert needs a frame".into()) };
        expert_policy(&f.seg, &f.depth, &self.config).map(Command::Action).map_err(|e| e.to_string())
    }
}

/// The learned classifier; it only ever receives the SegDepth image.
pub struct LearnedController<'m> {
    model: &'m PolicyModel,
}

impl<'m> LearnedController<'m> {
    pub fn new(model: &'m PolicyModel) -> Self {
        Self { model }
    }

    /// Downsamples to the model input size and predicts.
    pub fn decide(&self, segdepth: &SegDepthImage) -> std::result::Result<ActionClass, PolicyError> {
        let a = self.model.architecture();
        let small = if segdepth.dimensions() == (a.input_w as u32, a.input_h as u32) {
            segdepth.clone()
        } else {
            downsample(segdepth, a.input_w as u32, a.input_h as u32)
                .map_err(|e| PolicyError::Dataset(e.to_string()))?
        };
        Ok(self.model.predict(&small)?.action)
    }
}

impl Controller for LearnedController<'_> {
    fn name(&self) -> &str {
        "learned"
    }
    fn sensing(&self) -> Sensing {
        Sensing::SegDepth
    }
    fn act(&mut self, obs: Observation<'_>) -> std::result::Result<Command, String> {
        let Observation::SegDepth(sd) = obs else { return Err("learned policy takes SegDepth only".into()) };
        self.decide(sd).map(Command::Action).map_err(|e| e.to_string())
    }
}

/// Replays a planned path with a carrot on the path one step ahead, so
/// every visited position lies on the polyline.
#[derive(Debug, Clone)]
pub struct PathFollower {
    name: String,
    path: PlannedPath,
    /// Cumulative arc length at each waypoint.
    arc: Vec<f64>,
    progress: f64,
    step: f64,
}

impl PathFollower {
    pub fn new(name: impl Into<String>, path: PlannedPath, step: f64) -> Self {
        let mut arc = Vec::with_capacity(path.waypoints.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for w in path.waypoints.windows(2) {
            acc += dist(w[0], w[1]);
            arc.push(acc);
        }
        Self { name: name.into(), path, arc, progress: 0.0, step }
    }

    pub fn path(&self) -> &PlannedPath {
        &self.path
    }

    fn point_at(&self, s: f64) -> [f64; 2] {
        let total = *self.arc.last().unwrap();
        if s >= total {
            return self.path.last();
        }
        let k = self.arc.partition_point(|&a| a <= s).saturating_sub(1);
        let seg = self.arc[k + 1] - self.arc[k];
        let t = if seg > 0.0 { (s - self.arc[k]) / seg } else { 0.0 };
        let (a, b) = (self.path.waypoints[k], self.path.waypoints[k + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

impl Controller for PathFollower {
    fn name(&self) -> &str {
        &self.name
    }
    fn sensing(&self) -> Sensing {
        Sensing::Pose
    }
    fn act(&mut self, _obs: Observation<'_>) -> std::result::Result<Command, String> {
        let total = *self.arc.last().unwrap();
        if self.progress >= total - 1e-9 {
            return Ok(Command::Stop);
        }
        self.progress = (self.progress + self.step).min(total);
        let [x, y] = self.point_at(self.progress);
        Ok(Command::GoTo { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    BudgetExhausted,
    OutOfBounds,
    Collision,
    /// A replayed path ran out before the budget.
    PathComplete,
}

impl EpisodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::BudgetExhausted => "budget_exhausted",
            EpisodeStatus::OutOfBounds => "out_of_bounds",
            EpisodeStatus::Collision => "collision",
            EpisodeStatus::PathComplete => "path_complete",
        }
    }

    /// Ended before the distance budget for a reason other than running out.
    pub fn is_early(self) -> bool {
        matches!(self, EpisodeStatus::OutOfBounds | EpisodeStatus::Collision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: usize,
    /// Pose at which the frame was taken, before moving.
    pub pose: RobotPose,
    pub command: Command,
    /// Nadir of `pose` lies on an OOI cell.
    pub over_ooi: bool,
    pub newly_seen_cells: usize,
    /// Linear indices of OOI cells first seen in this frame.
    pub newly_seen_ooi: Vec<u32>,
    pub step_distance: f64,
    pub cumulative_distance: f64,
}

/// Identity of an episode for logs and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    pub world_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub records: Vec<StepRecord>,
    pub status: EpisodeStatus,
    pub final_pose: RobotPose,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LogLine {
    Header {
        #[serde(flatten)]
        meta: EpisodeMeta,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        provenance: Option<serde_json::Value>,
    },
    Step(StepRecord),
    End { status: EpisodeStatus, final_pose: RobotPose },
}

impl EpisodeLog {
    pub fn distance(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_distance)
    }

    /// Header line, one line per step, then an end line.
    pub fn write_jsonl(&self, mut w: impl Write, provenance: Option<serde_json::Value>) -> std::io::Result<()> {
        let header = LogLine::Header { meta: self.meta.clone(), provenance };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(&LogLine::Step(r.clone())).expect("record serializes"))?;
        }
        let end = LogLine::End { status: self.status, final_pose: self.final_pose };
        writeln!(w, "{}", serde_json::to_string(&end).expect("end serializes"))?;
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut meta = None;
        let mut records = Vec::new();
        let mut end = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| SimError::Parse { line: n + 1, reason: e.to_string() })?;
            match parsed {
                LogLine::Header { meta: m, .. } => meta = Some(m),
                LogLine::Step(s) => records.push(s),
                LogLine::End { status, final_pose } => end = Some((status, final_pose)),
            }
        }
        let meta = meta.ok_or(SimError::Parse { line: 0, reason: "missing header".into() })?;
        let (status, final_pose) = end.ok_or(SimError::Parse { line: 0, reason: "missing end line".into() })?;
        Ok(Self { meta, records, status, final_pose })
    }
}

/// Runs one episode from `start` until the step limit, the distance budget,
/// leaving the map, a collision, or the controller stopping.
///
/// A step that leaves the map or collides ends the episode and is not
/// recorded.
pub fn run_episode(
    map: &WorldMap,
    start: RobotPose,
    controller: &mut dyn Controller,
    params: &SimParams,
    cam: &CameraModel,
    meta: EpisodeMeta,
) -> Result<EpisodeLog> {
    params.validate()?;
    cam.validate()?;
    let mut seen = vec![false; map.cols() * map.rows()];
    let mut pose = start;
    let mut cumulative = 0.0;
    let mut records = Vec::new();
    let mut status = EpisodeStatus::BudgetExhausted;
    for step in 0..params.max_steps {
        if let Some(budget) = params.distance_budget {
            if cumulative + params.step_length() > budget + 1e-9 {
                break;
            }
        }
        let (mut frame, hits) = render_with_hits(map, &pose, cam)?;
        let mut newly_seen_cells = 0;
        let mut newly_seen_ooi = Vec::new();
        for k in footprint_from_hits(hits) {
            let k = k as usize;
            if !seen[k] {
                seen[k] = true;
                newly_seen_cells += 1;
                if map.ooi_grid()[k] {
                    newly_seen_ooi.push(k as u32);
                }
            }
        }
        let obs = match controller.sensing() {
            Sensing::Frame => Observation::Frame(&frame),
            Sensing::SegDepth => Observation::SegDepth(frame.compose()),
            Sensing::Pose => Observation::Pose(&pose),
        };
        let command = controller.act(obs).map_err(|reason| SimError::Controller {
            name: controller.name().to_string(),
            step,
            reason,
        })?;
        let next = match command {
            Command::Action(a) => step_dynamics(&pose, &a, params),
            Command::GoTo { x, y } => {
                let d = dist([pose.x, pose.y], [x, y]);
                if d <= 0.0 {
                    pose
                } else {
                    let s = d.min(params.step_length()) / d;
                    let yaw = normalize_yaw(-(y - pose.y).atan2(x - pose.x).to_degrees());
                    RobotPose::new(pose.x + s * (x - pose.x), pose.y + s * (y - pose.y), pose.z, yaw, 0.0)
                }
            }
            Command::Stop => {
                status = EpisodeStatus::PathComplete;
                break;
            }
        };
        if map.cell_at(next.x, next.y).is_err() {
            status = EpisodeStatus::OutOfBounds;
            break;
        }
        if check_collision(map, &next, params) {
            status = EpisodeStatus::Collision;
            break;
        }
        let d = ((next.x - pose.x).powi(2) + (next.y - pose.y).powi(2) + (next.z - pose.z).powi(2)).sqrt();
        cumulative += d;
        let over_ooi = map.query_cell(pose.x, pose.y).map(|(_, o)| o).unwrap_or(false);
        records.push(StepRecord {
            step,
            pose,
            command,
            over_ooi,
            newly_seen_cells,
            newly_seen_ooi,
            step_distance: d,
            cumulative_distance: cumulative,
        });
        pose = next;
    }
    Ok(EpisodeLog { meta, records, status, final_pose: pose })
}

/// Settings for bulk expert labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    /// Probability that the executed action is random rather than the expert's.
    pub explore_prob: f64,
    /// Steps before restarting from a fresh start pose.
    pub episode_steps: usize,
    /// Side of the downsampled stored image.
    pub image_size: u32,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { explore_prob: 0.3, episode_steps: 150, image_size: 64 }
    }
}

/// Random start: a free cell center, uniform yaw, altitude in the survey band.
fn random_start<R: Rng>(map: &WorldMap, rng: &mut R) -> RobotPose {
    loop {
        let col = rng.random_range(0..map.cols());
        let row = rng.random_range(0..map.rows());
        let idx = crate::world::CellIndex { col, row };
        if map.is_obstacle(idx) {
            continue;
        }
        let (x, y) = map.cell_center(idx);
        return RobotPose::new(x, y, rng.random_range(5.0..9.0), rng.random_range(-180.0..180.0), 0.0);
    }
}

/// Flies the expert over `map`, labeling every frame with the expert's
/// action while executing a random action with probability `explore_prob`.
/// Episodes restart from a random pose after `episode_steps` steps or on
/// leaving the map or colliding. The first episode starts at the spawn pose.
pub fn collect_expert_samples(
    map: &WorldMap,
    scenario: &str,
    samples: usize,
    params: &SimParams,
    cam: &CameraModel,
    expert: &ExpertConfig,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let mut pose = map.spawn_pose();
    let mut in_episode = 0;
    let mut step = 0u64;
    while out.len() < samples {
        let (mut frame, _) = render_with_hits(map, &pose, cam)?;
        let label = expert_policy(&frame.seg, &frame.depth, expert)?;
        let sd = frame.compose();
        let image = downsample(sd, cfg.image_size, cfg.image_size).map_err(|e| PolicyError::Dataset(e.to_string()))?;
        out.push(LabeledSample {
            image,
            c_yaw: label.c_yaw,
            c_pitch: label.c_pitch,
            provenance: Provenance::Expert,
            scenario_id: Some(scenario.to_string()),
            step,
        });
        step += 1;
        let executed = if rng.random_bool(cfg.explore_prob.clamp(0.0, 1.0)) {
            ActionClass::with_deltas(
                rng.random_range(0..7),
                rng.random_range(0..7),
                expert.delta_yaw_deg,
                expert.delta_pitch_deg,
            )?
        } else {
            label
        };
        let next = step_dynamics(&pose, &executed, params);
        in_episode += 1;
        let done = in_episode >= cfg.episode_steps
            || map.cell_at(next.x, next.y).is_err()
            || check_collision(map, &next, params);
        if done {
            pose = random_start(map, &mut rng);
            in_episode = 0;
        } else {
            pose = next;
        }
    }
    Ok(out)
}
