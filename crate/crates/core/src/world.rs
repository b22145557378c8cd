//! Seafloor environments: a 2.5-D heightfield with a per-cell object-of-interest
//! (OOI) flag, procedural reef scenarios, and the versioned JSON world file.
//!
//! Cells use half-open indexing: cell `(col, row)` covers
//! `[col·c, (col+1)·c) × [row·c, (row+1)·c)` with the origin at the lower-left
//! corner of the map, `x` growing with `col` and `y` growing with `row`.
//! Obstacles are raised terrain: any cell whose height reaches the obstacle
//! threshold blocks motion and occludes the camera.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::RobotPose;

pub const DEFAULT_CELL_SIZE: f64 = 0.25;
pub const DEFAULT_OBSTACLE_THRESHOLD: f32 = 5.0;
pub const WORLD_FILE_VERSION: &str = "1.0";
const WORLD_FILE_MAJOR: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("query ({x}, {y}) lies outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("world invariant violated: {0}")]
    Invariant(String),
    #[error("malformed world file, field `{field}`: {reason}")]
    Parse { field: String, reason: String },
    #[error("unsupported world file version `{0}`")]
    UnsupportedVersion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = WorldError> = std::result::Result<T, E>;

/// Grid cell address. Ordering is row-major (row first), matching storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(col: usize, row: usize) -> Self {
        Self { row, col }
    }
}

/// Axis-aligned map rectangle `[min_x, max_x) × [min_y, max_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x < self.max_x && y >= self.min_y && y < self.max_y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    width_m: f64,
    height_m: f64,
    cell_size: f64,
    cols: usize,
    rows: usize,
    heights: Vec<f32>,
    ooi: Vec<bool>,
    ooi_kind: String,
    spawn_pose: RobotPose,
    obstacle_threshold: f32,
    max_height: f32,
    /// Max height per `BLOCK`×`BLOCK` cell block, row-major.
    block_max: Vec<f32>,
    block_cols: usize,
}

/// Side of the coarse max-height blocks used to skip empty space when ray casting.
pub(crate) const BLOCK: usize = 8;

fn grid_dim(extent: f64, cell: f64) -> usize {
    // Guard against 160.0 / 0.25 landing a hair above an integer.
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

impl WorldMap {
    /// Builds a map and checks every structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width_m: f64,
        height_m: f64,
        cell_size: f64,
        heights: Vec<f32>,
        ooi: Vec<bool>,
        ooi_kind: impl Into<String>,
        spawn_pose: RobotPose,
        obstacle_threshold: f32,
    ) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(WorldError::InvalidParameter {
                name: "cell_size",
                reason: format!("must be positive, got {cell_size}"),
            });
        }
        for (name, v) in [("width_m", width_m), ("height_m", height_m)] {
            if !(v.is_finite() && v >= cell_size) {
                return Err(WorldError::InvalidParameter {
                    name,
                    reason: format!("must be finite and at least one cell, got {v}"),
                });
            }
        }
        if !(obstacle_threshold.is_finite() && obstacle_threshold > 0.0) {
            return Err(WorldError::InvalidParameter {
                name: "obstacle_threshold",
                reason: format!("must be positive, got {obstacle_threshold}"),
            });
        }
        let cols = grid_dim(width_m, cell_size);
        let rows = grid_dim(height_m, cell_size);
        let n = cols * rows;
        if heights.len() != n || ooi.len() != n {
            return Err(WorldError::Invariant(format!(
                "grid sizes {}/{} do not match {cols}x{rows}",
                heights.len(),
                ooi.len()
            )));
        }
        let mut max_height = 0.0f32;
        for (k, &h) in heights.iter().enumerate() {
            if !h.is_finite() || h < 0.0 {
                return Err(WorldError::Invariant(format!(
                    "height {h} at cell {k} is not finite and non-negative"
                )));
            }
            if h >= obstacle_threshold && ooi[k] {
                return Err(WorldError::Invariant(format!(
                    "cell {} (col {}, row {}) is both an obstacle and OOI",
                    k,
                    k % cols,
                    k / cols
                )));
            }
            max_height = max_height.max(h);
        }
        let block_cols = cols.div_ceil(BLOCK);
        let block_rows = rows.div_ceil(BLOCK);
        let mut block_max = vec![0.0f32; block_cols * block_rows];
        for (k, &h) in heights.iter().enumerate() {
            let b = (k / cols / BLOCK) * block_cols + (k % cols) / BLOCK;
            block_max[b] = block_max[b].max(h);
        }
        Ok(Self {
            width_m,
            height_m,
            cell_size,
            cols,
            rows,
            heights,
            ooi,
            ooi_kind: ooi_kind.into(),
            spawn_pose,
            obstacle_threshold,
            max_height,
            block_max,
            block_cols,
        })
    }

    pub fn width_m(&self) -> f64 {
        self.width_m
    }
    pub fn height_m(&self) -> f64 {
        self.height_m
    }
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn ooi_kind(&self) -> &str {
        &self.ooi_kind
    }
    pub fn spawn_pose(&self) -> RobotPose {
        self.spawn_pose
    }
    pub fn obstacle_threshold(&self) -> f32 {
        self.obstacle_threshold
    }
    pub fn max_height(&self) -> f32 {
        self.max_height
    }

    /// Max height inside block `(bc, br)` of [`BLOCK`]×[`BLOCK`] cells.
    #[inline]
    pub(crate) fn block_max(&self, bc: usize, br: usize) -> f32 {
        self.block_max[br * self.block_cols + bc]
    }
    pub fn heights(&self) -> &[f32] {
        &self.heights
    }
    pub fn ooi_grid(&self) -> &[bool] {
        &self.ooi
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { min_x: 0.0, min_y: 0.0, max_x: self.width_m, max_y: self.height_m }
    }

    /// Same map with a different OOI tag; everything the camera sees is unchanged.
    pub fn with_ooi_kind(&self, kind: impl Into<String>) -> Self {
        Self { ooi_kind: kind.into(), ..self.clone() }
    }

    #[inline]
    pub fn linear(&self, idx: CellIndex) -> usize {
        idx.row * self.cols + idx.col
    }

    #[inline]
    pub fn unlinear(&self, k: usize) -> CellIndex {
        CellIndex { row: k / self.cols, col: k % self.cols }
    }

    #[inline]
    pub fn height_at(&self, idx: CellIndex) -> f32 {
        self.heights[self.linear(idx)]
    }

    #[inline]
    pub fn is_ooi(&self, idx: CellIndex) -> bool {
        self.ooi[self.linear(idx)]
    }

    #[inline]
    pub fn is_obstacle(&self, idx: CellIndex) -> bool {
        self.height_at(idx) >= self.obstacle_threshold
    }

    #[inline]
    pub fn is_obstacle_linear(&self, k: usize) -> bool {
        self.heights[k] >= self.obstacle_threshold
    }

    pub fn cell_center(&self, idx: CellIndex) -> (f64, f64) {
        (
            (idx.col as f64 + 0.5) * self.cell_size,
            (idx.row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `(x, y)` under the half-open convention.
    pub fn cell_at(&self, x: f64, y: f64) -> Result<CellIndex> {
        if !self.bounds().contains(x, y) {
            return Err(WorldError::OutOfBounds { x, y });
        }
        let col = ((x / self.cell_size).floor() as usize).min(self.cols - 1);
        let row = ((y / self.cell_size).floor() as usize).min(self.rows - 1);
        Ok(CellIndex { row, col })
    }

    pub fn query_cell(&self, x: f64, y: f64) -> Result<(f32, bool)> {
        let idx = self.cell_at(x, y)?;
        Ok((self.height_at(idx), self.is_ooi(idx)))
    }

    pub fn ooi_cell_count(&self) -> usize {
        self.ooi.iter().filter(|&&f| f).count()
    }

    pub fn obstacle_cell_count(&self) -> usize {
        self.heights.iter().filter(|&&h| h >= self.obstacle_threshold).count()
    }

    /// Boolean obstacle raster in storage order.
    pub fn obstacle_grid(&self) -> Vec<bool> {
        self.heights.iter().map(|&h| h >= self.obstacle_threshold).collect()
    }

    /// Stable digest of the map contents, used to tie logs to the world they ran on.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.width_m.to_le_bytes());
        hasher.update(self.height_m.to_le_bytes());
        hasher.update(self.cell_size.to_le_bytes());
        for h in &self.heights {
            hasher.update(h.to_le_bytes());
        }
        hasher.update(pack_bits(&self.ooi));
        hex::encode(&hasher.finalize()[..8])
    }
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    GridWorld,
    EShape,
    DisconnectedPaths,
    BranchingCorridor,
    RockReef,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::GridWorld,
        ScenarioId::EShape,
        ScenarioId::DisconnectedPaths,
        ScenarioId::BranchingCorridor,
        ScenarioId::RockReef,
    ];

    /// The four oyster reef layouts.
    pub const OYSTER: [ScenarioId; 4] = [
        ScenarioId::GridWorld,
        ScenarioId::EShape,
        ScenarioId::DisconnectedPaths,
        ScenarioId::BranchingCorridor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::GridWorld => "grid_world",
            ScenarioId::EShape => "e_shape",
            ScenarioId::DisconnectedPaths => "disconnected_paths",
            ScenarioId::BranchingCorridor => "branching_corridor",
            ScenarioId::RockReef => "rock_reef",
        }
    }

    pub fn ooi_kind(self) -> &'static str {
        match self {
            ScenarioId::RockReef => "rock",
            _ => "oyster",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        match key.as_str() {
            "gridworld" | "grid" => Ok(ScenarioId::GridWorld),
            "eshape" => Ok(ScenarioId::EShape),
            "disconnectedpaths" | "disconnected" => Ok(ScenarioId::DisconnectedPaths),
            "branchingcorridor" | "branching" => Ok(ScenarioId::BranchingCorridor),
            "rockreef" | "rock" => Ok(ScenarioId::RockReef),
            _ => Err(WorldError::InvalidParameter {
                name: "scenario_id",
                reason: format!("unknown scenario `{s}`"),
            }),
        }
    }
}

/// Size parameters shared by all scenarios. Defaults are workbench constants;
/// the reef layouts are procedural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Side of the square map, meters. Range [60, 400].
    pub extent_m: f64,
    /// Range [0.05, 2].
    pub cell_size: f64,
    /// Width of the wide reef bands, meters. Range [2, 30].
    pub wide_width_m: f64,
    /// Width of narrow reef bars and branches, meters. Range [1, 15], at most `wide_width_m`.
    pub narrow_width_m: f64,
    /// Sand gap between the two reef groups of `DisconnectedPaths`. Range [2, 0.4·extent].
    pub gap_m: f64,
    /// Number of obstacle pillars. Range [2, 12].
    pub obstacle_count: usize,
    /// Nominal pillar height; individual pillars vary by ±0.5 m. Range [5.5, 12].
    pub obstacle_height_m: f64,
    /// Pillar side length, meters. Range [1, 10].
    pub obstacle_size_m: f64,
    /// Spawn altitude above datum, meters. Range [3, 12].
    pub spawn_altitude_m: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            extent_m: 160.0,
            cell_size: DEFAULT_CELL_SIZE,
            wide_width_m: 12.0,
            narrow_width_m: 4.0,
            gap_m: 24.0,
            obstacle_count: 4,
            obstacle_height_m: 6.0,
            obstacle_size_m: 3.0,
            spawn_altitude_m: 7.0,
        }
    }
}

fn check_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(WorldError::InvalidParameter { name, reason: format!("{v} outside [{lo}, {hi}]") })
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        check_range("extent_m", self.extent_m, 60.0, 400.0)?;
        check_range("cell_size", self.cell_size, 0.05, 2.0)?;
        check_range("wide_width_m", self.wide_width_m, 2.0, 30.0)?;
        check_range("narrow_width_m", self.narrow_width_m, 1.0, self.wide_width_m.min(15.0))?;
        check_range("gap_m", self.gap_m, 2.0, 0.4 * self.extent_m)?;
        check_range("obstacle_count", self.obstacle_count as f64, 2.0, 12.0)?;
        check_range("obstacle_height_m", self.obstacle_height_m, 5.5, 12.0)?;
        check_range("obstacle_size_m", self.obstacle_size_m, 1.0, 10.0)?;
        check_range("spawn_altitude_m", self.spawn_altitude_m, 3.0, 12.0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: ScenarioId,
    pub seed: u64,
    #[serde(default)]
    pub params: ScenarioParams,
}

impl ScenarioSpec {
    pub fn new(scenario_id: ScenarioId, seed: u64) -> Self {
        Self { scenario_id, seed, params: ScenarioParams::default() }
    }

    pub fn with_params(mut self, params: ScenarioParams) -> Self {
        self.params = params;
        self
    }
}

/// OOI shape primitive in meters.
#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Annular sector, angles in degrees counter-clockwise from +x.
    Arc { cx: f64, cy: f64, r_in: f64, r_out: f64, from_deg: f64, to_deg: f64 },
}

impl Shape {
    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Shape::Rect { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Arc { cx, cy, r_in, r_out, from_deg, to_deg } => {
                let (dx, dy) = (x - cx, y - cy);
                let r = dx.hypot(dy);
                if r < r_in || r >= r_out {
                    return false;
                }
                let a = dy.atan2(dx).to_degrees().rem_euclid(360.0);
                a >= from_deg && a <= to_deg
            }
        }
    }
}

struct Layout {
    shapes: Vec<Shape>,
    spawn_y: f64,
}

fn layout(id: ScenarioId, p: &ScenarioParams, rng: &mut ChaCha8Rng) -> Layout {
    let e = p.extent_m;
    let m = 0.15 * e;
    let wide = p.wide_width_m;
    let narrow = p.narrow_width_m;
    let mut jitter = |amp: f64| rng.random_range(-amp..=amp);
    match id {
        ScenarioId::GridWorld => {
            // Lattice of medium-width strips with outward branches.
            let w = 0.5 * (wide + narrow);
            let span = e - 2.0 * m;
            let (ox, oy) = (jitter(3.0), jitter(3.0));
            let mut shapes = Vec::new();
            let mut ys = Vec::new();
            for k in 0..3 {
                let x = m + span * k as f64 / 2.0 + ox + jitter(2.0);
                let y = m + span * k as f64 / 2.0 + oy + jitter(2.0);
                ys.push(y);
                shapes.push(Shape::rect(x - w / 2.0, m + oy - w / 2.0, x + w / 2.0, e - m + oy + w / 2.0));
                shapes.push(Shape::rect(m + ox - w / 2.0, y - w / 2.0, e - m + ox + w / 2.0, y + w / 2.0));
            }
            // Branches: up from the top strip, right from the middle strip,
            // down from the bottom strip.
            let stub = 0.08 * e;
            let bx = m + 0.25 * span + ox;
            shapes.push(Shape::rect(bx - narrow / 2.0, ys[2], bx + narrow / 2.0, ys[2] + stub + w / 2.0));
            let bx = m + 0.75 * span + ox;
            shapes.push(Shape::rect(bx - narrow / 2.0, ys[0] - stub - w / 2.0, bx + narrow / 2.0, ys[0]));
            shapes.push(Shape::rect(e - m + ox, ys[1] - narrow / 2.0, e - m + ox + stub, ys[1] + narrow / 2.0));
            Layout { shapes, spawn_y: ys[1] }
        }
        ScenarioId::EShape => {
            // C-shaped wide band opening towards +x, narrow bar attached to its spine.
            let (ox, oy) = (jitter(3.0), jitter(3.0));
            let (x0, x1) = (m + ox, e - m + ox);
            let (y0, y1) = (m + oy, e - m + oy);
            let mid = 0.5 * e + oy + jitter(2.0);
            let bar_end = x0 + 0.75 * (x1 - x0);
            let shapes = vec![
                Shape::rect(x0, y0, x0 + wide, y1),
                Shape::rect(x0, y1 - wide, x1, y1),
                Shape::rect(x0, y0, x1, y0 + wide),
                Shape::rect(x0 + wide - 0.5, mid - narrow / 2.0, bar_end, mid + narrow / 2.0),
            ];
            Layout { shapes, spawn_y: mid }
        }
        ScenarioId::DisconnectedPaths => {
            // Two T-shaped groups facing each other across a sand gap.
            let oy = jitter(3.0);
            let mid = 0.5 * e + oy;
            let gx0 = 0.5 * e - p.gap_m / 2.0;
            let gx1 = 0.5 * e + p.gap_m / 2.0;
            let (y0, y1) = (m + oy + jitter(2.0), e - m + oy + jitter(2.0));
            let left_spine = (m).min(gx0 - wide);
            let right_spine = (e - m - wide).max(gx1);
            let shapes = vec![
                Shape::rect(left_spine, y0, left_spine + wide, y1),
                Shape::rect(left_spine, mid - wide / 2.0, gx0, mid + wide / 2.0),
                Shape::rect(gx1, mid - wide / 2.0 + jitter(1.0), right_spine + wide, mid + wide / 2.0),
                Shape::rect(right_spine, e - y1, right_spine + wide, e - y0),
            ];
            Layout { shapes, spawn_y: mid }
        }
        ScenarioId::BranchingCorridor => {
            // Main corridor, wide branches up and narrow branches down.
            let (ox, oy) = (jitter(3.0), jitter(3.0));
            let span = e - 2.0 * m;
            let mid = 0.5 * e + oy;
            let len = 0.3 * e;
            let mut shapes = vec![Shape::rect(m + ox, mid - wide / 2.0, e - m + ox, mid + wide / 2.0)];
            for f in [0.3, 0.8] {
                let x = m + ox + f * span + jitter(2.0);
                shapes.push(Shape::rect(x - wide / 2.0, mid, x + wide / 2.0, mid + wide / 2.0 + len));
            }
            for f in [0.55, 0.95] {
                let x = m + ox + f * span + jitter(2.0);
                shapes.push(Shape::rect(x - narrow / 2.0, mid - wide / 2.0 - len, x + narrow / 2.0, mid));
            }
            Layout { shapes, spawn_y: mid }
        }
        ScenarioId::RockReef => {
            let (ox, oy) = (jitter(3.0), jitter(3.0));
            let r_out = 0.35 * e;
            let shapes = vec![Shape::Arc {
                cx: 0.5 * e + ox,
                cy: 0.5 * e + oy,
                r_in: r_out - wide,
                r_out,
                from_deg: 45.0,
                to_deg: 315.0,
            }];
            Layout { shapes, spawn_y: 0.5 * e + oy }
        }
    }
}

/// Summed-area table over a boolean raster for O(1) rectangle counts.
struct Integral {
    cols: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &[bool], cols: usize, rows: usize) -> Self {
        let w = cols + 1;
        let mut sums = vec![0u32; w * (rows + 1)];
        for r in 0..rows {
            let mut run = 0u32;
            for c in 0..cols {
                run += mask[r * cols + c] as u32;
                sums[(r + 1) * w + c + 1] = sums[r * w + c + 1] + run;
            }
        }
        Self { cols, sums }
    }

    /// Count over cols `[c0, c1)` and rows `[r0, r1)`.
    fn count(&self, c0: usize, r0: usize, c1: usize, r1: usize) -> u32 {
        let w = self.cols + 1;
        self.sums[r1 * w + c1] + self.sums[r0 * w + c0] - self.sums[r0 * w + c1] - self.sums[r1 * w + c0]
    }
}

/// Generates the environment for `spec`. A pure function of its input.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<WorldMap> {
    let p = &spec.params;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x5EAF_100D_u64 << 8) ^ spec.scenario_id as u64);
    let lay = layout(spec.scenario_id, p, &mut rng);

    let e = p.extent_m;
    let c = p.cell_size;
    let cols = grid_dim(e, c);
    let rows = cols;
    let n = cols * rows;

    let phase: [f64; 2] = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
    let mut heights = vec![0.0f32; n];
    let mut ooi = vec![false; n];
    for r in 0..rows {
        let y = (r as f64 + 0.5) * c;
        for col in 0..cols {
            let x = (col as f64 + 0.5) * c;
            let k = r * cols + col;
            let floor = 0.15
                + 0.10 * (std::f64::consts::TAU * x / 23.0 + phase[0]).sin()
                + 0.05 * (std::f64::consts::TAU * y / 17.0 + phase[1]).sin();
            let inside_margin = x > 1.0 && y > 1.0 && x < e - 1.0 && y < e - 1.0;
            let is_ooi = inside_margin && lay.shapes.iter().any(|s| s.contains(x, y));
            ooi[k] = is_ooi;
            heights[k] = (floor + if is_ooi { 0.1 } else { 0.0 }) as f32;
        }
    }

    // Pillars sit on sand, close enough to the reef to matter, away from spawn.
    let spawn = RobotPose::new(0.06 * e, lay.spawn_y.clamp(2.0, e - 2.0), p.spawn_altitude_m, 0.0, 0.0);
    let integral = Integral::new(&ooi, cols, rows);
    let side = ((p.obstacle_size_m / c).round() as usize).max(1);
    let clear = (2.0 / c).ceil() as usize;
    let near = (12.0 / c).ceil() as usize;
    let mut placed: Vec<(usize, usize)> = Vec::new();
    let mut tries = 0;
    while placed.len() < p.obstacle_count {
        tries += 1;
        if tries > 20_000 {
            return Err(WorldError::Invariant(format!(
                "could only place {} of {} obstacles",
                placed.len(),
                p.obstacle_count
            )));
        }
        let c0 = rng.random_range(side + clear..cols - side - clear);
        let r0 = rng.random_range(side + clear..rows - side - clear);
        let sub = |a: usize, b: usize| a.saturating_sub(b);
        let clear_count =
            integral.count(sub(c0, clear), sub(r0, clear), (c0 + side + clear).min(cols), (r0 + side + clear).min(rows));
        let near_count =
            integral.count(sub(c0, near), sub(r0, near), (c0 + side + near).min(cols), (r0 + side + near).min(rows));
        if clear_count > 0 || near_count == 0 {
            continue;
        }
        let (px, py) = ((c0 as f64 + side as f64 / 2.0) * c, (r0 as f64 + side as f64 / 2.0) * c);
        if (px - spawn.x).hypot(py - spawn.y) < 15.0 {
            continue;
        }
        let min_sep = (6.0 / c) as usize + side;
        if placed.iter().any(|&(a, b)| a.abs_diff(c0) < min_sep && b.abs_diff(r0) < min_sep) {
            continue;
        }
        placed.push((c0, r0));
        let h = (p.obstacle_height_m + rng.random_range(-0.5..=0.5)).max(DEFAULT_OBSTACLE_THRESHOLD as f64 + 0.25);
        for r in r0..r0 + side {
            for col in c0..c0 + side {
                heights[r * cols + col] = h as f32;
            }
        }
    }

    let map = WorldMap::new(e, e, c, heights, ooi, spec.scenario_id.ooi_kind(), spawn, DEFAULT_OBSTACLE_THRESHOLD)?;
    let free = n - map.obstacle_cell_count();
    let frac = map.ooi_cell_count() as f64 / free as f64;
    if !(0.05..=0.40).contains(&frac) {
        return Err(WorldError::Invariant(format!(
            "OOI fraction {frac:.3} of free area outside [0.05, 0.40]; adjust band widths"
        )));
    }
    Ok(map)
}

/// Number of 4-connected OOI components.
pub fn ooi_components(map: &WorldMap) -> usize {
    let (cols, rows) = (map.cols(), map.rows());
    let grid = map.ooi_grid();
    let mut seen = vec![false; grid.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if !grid[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (r, c) = (k / cols, k % cols);
            let mut visit = |nk: usize| {
                if grid[nk] && !seen[nk] {
                    seen[nk] = true;
                    stack.push(nk);
                }
            };
            if c > 0 {
                visit(k - 1);
            }
            if c + 1 < cols {
                visit(k + 1);
            }
            if r > 0 {
                visit(k - cols);
            }
            if r + 1 < rows {
                visit(k + cols);
            }
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: String,
    width_m: f64,
    height_m: f64,
    cell_size: f64,
    ooi_kind: String,
    spawn_pose: RobotPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obstacle_threshold_m: Option<f32>,
    /// Row-major little-endian f32, base64.
    height_grid: String,
    /// Row-major bit-packed (LSB first), base64.
    ooi_grid: String,
    /// Free-form run metadata; ignored on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

fn parse_err(field: &str, reason: impl Into<String>) -> WorldError {
    WorldError::Parse { field: field.to_string(), reason: reason.into() }
}

impl WorldMap {
    pub fn to_json(&self) -> String {
        self.to_json_with_provenance(None)
    }

    pub fn to_json_with_provenance(&self, provenance: Option<serde_json::Value>) -> String {
        let bytes: Vec<u8> = self.heights.iter().flat_map(|h| h.to_le_bytes()).collect();
        let file = WorldFile {
            version: WORLD_FILE_VERSION.to_string(),
            width_m: self.width_m,
            height_m: self.height_m,
            cell_size: self.cell_size,
            ooi_kind: self.ooi_kind.clone(),
            spawn_pose: self.spawn_pose,
            obstacle_threshold_m: Some(self.obstacle_threshold),
            height_grid: B64.encode(bytes),
            ooi_grid: B64.encode(pack_bits(&self.ooi)),
            provenance,
        };
        serde_json::to_string_pretty(&file).expect("world file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_err("<document>", e.to_string()))?;
        let version = value
            .get("version")
            .ok_or_else(|| parse_err("version", "missing"))?
            .as_str()
            .ok_or_else(|| parse_err("version", "not a string"))?;
        let major: u32 = version
            .split('.')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("version", format!("unparseable `{version}`")))?;
        if major != WORLD_FILE_MAJOR {
            return Err(WorldError::UnsupportedVersion(version.to_string()));
        }
        let file: WorldFile = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            WorldError::Parse { field, reason: msg }
        })?;
        if !(file.cell_size.is_finite() && file.cell_size > 0.0) {
            return Err(parse_err("cell_size", "must be positive"));
        }
        let cols = grid_dim(file.width_m, file.cell_size);
        let rows = grid_dim(file.height_m, file.cell_size);
        let n = cols * rows;
        let hb = B64.decode(file.height_grid.as_bytes()).map_err(|e| parse_err("height_grid", e.to_string()))?;
        if hb.len() != 4 * n {
            return Err(parse_err("height_grid", format!("expected {} bytes, found {}", 4 * n, hb.len())));
        }
        let heights = hb.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let ob = B64.decode(file.ooi_grid.as_bytes()).map_err(|e| parse_err("ooi_grid", e.to_string()))?;
        let ooi = unpack_bits(&ob, n)
            .ok_or_else(|| parse_err("ooi_grid", format!("expected {} bytes, found {}", n.div_ceil(8), ob.len())))?;
        WorldMap::new(
            file.width_m,
            file.height_m,
            file.cell_size,
            heights,
            ooi,
            file.ooi_kind,
            file.spawn_pose,
            file.obstacle_threshold_m.unwrap_or(DEFAULT_OBSTACLE_THRESHOLD),
        )
    }
}

pub fn save_world(map: &WorldMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, map.to_json())?;
    Ok(())
}

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldMap> {
    let text = std::fs::read_to_string(path)?;
    WorldMap::from_json(&text)
}
