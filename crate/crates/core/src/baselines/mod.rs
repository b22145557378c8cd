//! Comparison planners that, unlike the policies, read the map: a Brownian
//! Bridge random walk and Boustrophedon cell decomposition coverage.

mod bcd;
mod bridge;

pub use bcd::{bcd_decompose, bcd_plan, grid_path, lawnmower, nominal_lane_spacing, BcdCell, ColumnSlice};
pub use bridge::{brownian_bridge_unconstrained, brownian_bridge_walk, BridgeParams};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldMap;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("map has no free cell")]
    NoFreeCell,
    #[error("start ({x:.2}, {y:.2}) is outside the map or inside an obstacle")]
    BadStart { x: f64, y: f64 },
    #[error("cell {cell} is unreachable from the start (entry near ({x:.2}, {y:.2}))")]
    Unreachable { cell: usize, x: f64, y: f64 },
    #[error("degenerate cell {0}")]
    DegenerateCell(usize),
    #[error("path file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

/// Origin of a path segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentTag {
    Bridge,
    Lane,
    Transit,
}

/// Polyline at a fixed altitude. `tags[k]` labels the segment from
/// `waypoints[k]` to `waypoints[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub altitude: f64,
    pub waypoints: Vec<[f64; 2]>,
    pub tags: Vec<SegmentTag>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointLine {
    x: f64,
    y: f64,
    z: f64,
    /// Tag of the segment arriving at this waypoint; absent on the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<SegmentTag>,
}

impl PlannedPath {
    pub fn new(altitude: f64, start: [f64; 2]) -> Self {
        Self { altitude, waypoints: vec![start], tags: Vec::new() }
    }

    /// Appends a waypoint unless it repeats the last one.
    pub fn push(&mut self, p: [f64; 2], tag: SegmentTag) {
        if self.waypoints.last() != Some(&p) {
            self.waypoints.push(p);
            self.tags.push(tag);
        }
    }

    pub fn last(&self) -> [f64; 2] {
        *self.waypoints.last().expect("path has a start")
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Total polyline length in meters.
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Checks the structural invariants against `map`.
    pub fn validate(&self, map: &WorldMap) -> std::result::Result<(), String> {
        if self.tags.len() + 1 != self.waypoints.len() {
            return Err(format!("{} tags for {} waypoints", self.tags.len(), self.waypoints.len()));
        }
        for (k, w) in self.waypoints.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(format!("waypoints {k} and {} coincide", k + 1));
            }
        }
        for (k, &[x, y]) in self.waypoints.iter().enumerate() {
            match map.cell_at(x, y) {
                Ok(c) if map.is_obstacle(c) => return Err(format!("waypoint {k} lies in an obstacle")),
                Ok(_) => {}
                Err(_) => return Err(format!("waypoint {k} ({x}, {y}) is out of bounds")),
            }
        }
        Ok(())
    }

    /// One JSON object per waypoint.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for (k, &[x, y]) in self.waypoints.iter().enumerate() {
            let line = WaypointLine { x, y, z: self.altitude, tag: k.checked_sub(1).map(|i| self.tags[i]) };
            writeln!(w, "{}", serde_json::to_string(&line).expect("waypoint serializes"))?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut path: Option<PlannedPath> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let wp: WaypointLine =
                serde_json::from_str(&line).map_err(|e| PlanError::Parse { line: n + 1, reason: e.to_string() })?;
            match &mut path {
                None => path = Some(PlannedPath::new(wp.z, [wp.x, wp.y])),
                Some(p) => {
                    let tag = wp.tag.ok_or(PlanError::Parse { line: n + 1, reason: "missing tag".into() })?;
                    p.waypoints.push([wp.x, wp.y]);
                    p.tags.push(tag);
                }
            }
        }
        path.ok_or(PlanError::Parse { line: 0, reason: "empty path file".into() })
    }
}

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Linear indices of all free (non-obstacle) cells.
pub(crate) fn free_cells(map: &WorldMap) -> Vec<usize> {
    (0..map.cols() * map.rows()).filter(|&k| !map.is_obstacle_linear(k)).collect()
}
