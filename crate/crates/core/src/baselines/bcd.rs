//! Boustrophedon cell decomposition and lawnmower coverage.
//!
//! The sweep runs along grid columns (increasing x). A cell continues from
//! one column to the next only while its free interval overlaps exactly one
//! interval on each side; any split, merge, birth or death closes the cells
//! involved and opens new ones.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{dist, PlanError, PlannedPath, Result, SegmentTag};
use crate::sensor::CameraModel;
use crate::world::{CellIndex, WorldMap};

/// Free rows `row_lo..=row_hi` of one grid column belonging to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSlice {
    pub col: usize,
    pub row_lo: usize,
    pub row_hi: usize,
}

/// A sweep-connected free region: one slice per consecutive column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcdCell {
    pub id: usize,
    pub slices: Vec<ColumnSlice>,
}

impl BcdCell {
    pub fn first_col(&self) -> usize {
        self.slices[0].col
    }

    pub fn last_col(&self) -> usize {
        self.slices[self.slices.len() - 1].col
    }

    pub fn slice_at(&self, col: usize) -> Option<&ColumnSlice> {
        col.checked_sub(self.first_col()).and_then(|k| self.slices.get(k))
    }

    pub fn area_cells(&self) -> usize {
        self.slices.iter().map(|s| s.row_hi - s.row_lo + 1).sum()
    }

    pub fn contains(&self, idx: CellIndex) -> bool {
        self.slice_at(idx.col).is_some_and(|s| (s.row_lo..=s.row_hi).contains(&idx.row))
    }
}

fn free_intervals(map: &WorldMap, col: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for row in 0..map.rows() {
        let free = !map.is_obstacle(CellIndex { col, row });
        match (free, start) {
            (true, None) => start = Some(row),
            (false, Some(s)) => {
                out.push((s, row - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, map.rows() - 1));
    }
    out
}

#[inline]
fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Partitions free space into cells by a column sweep.
pub fn bcd_decompose(map: &WorldMap) -> Vec<BcdCell> {
    let mut cells: Vec<BcdCell> = Vec::new();
    // (cell id, interval) for the previous column.
    let mut prev: Vec<(usize, (usize, usize))> = Vec::new();
    for col in 0..map.cols() {
        let cur = free_intervals(map, col);
        let mut next = Vec::with_capacity(cur.len());
        for &iv in &cur {
            let left: Vec<usize> = (0..prev.len()).filter(|&p| overlaps(prev[p].1, iv)).collect();
            let continues = left.len() == 1 && cur.iter().filter(|&&other| overlaps(prev[left[0]].1, other)).count() == 1;
            let id = if continues {
                prev[left[0]].0
            } else {
                cells.push(BcdCell { id: cells.len(), slices: Vec::new() });
                cells.len() - 1
            };
            cells[id].slices.push(ColumnSlice { col, row_lo: iv.0, row_hi: iv.1 });
            next.push((id, iv));
        }
        prev = next;
    }
    cells
}

/// Default lane spacing: footprint width across the boresight ground point
/// at `altitude` over flat floor, capped by the camera range.
pub fn nominal_lane_spacing(cam: &CameraModel, altitude: f64) -> f64 {
    let tilt = -cam.boresight_tilt_deg.to_radians();
    let slant = if tilt > 1e-3 { (altitude / tilt.sin()).min(cam.max_range_m) } else { cam.max_range_m };
    2.0 * slant * (cam.hfov_deg.to_radians() / 2.0).tan()
}

/// Lane x positions for a cell: `floor(w/s) + 1` lanes spaced `s` apart,
/// centered between the first and last column centers.
fn lane_xs(map: &WorldMap, cell: &BcdCell, spacing: f64) -> Vec<f64> {
    let c = map.cell_size();
    let x0 = (cell.first_col() as f64 + 0.5) * c;
    let x1 = (cell.last_col() as f64 + 0.5) * c;
    let w = x1 - x0;
    let n = (w / spacing + 1e-9).floor() as usize;
    let inset = (w - n as f64 * spacing) / 2.0;
    (0..=n).map(|k| x0 + inset + k as f64 * spacing).collect()
}

/// Back-and-forth vertical lanes over `cell`, returned as `(bottom, top)`
/// endpoints per lane in sweep order.
pub fn lawnmower(map: &WorldMap, cell: &BcdCell, lane_spacing: f64) -> Result<Vec<([f64; 2], [f64; 2])>> {
    if !(lane_spacing > 0.0 && lane_spacing.is_finite()) {
        return Err(PlanError::InvalidParameter {
            name: "lane_spacing",
            reason: format!("{lane_spacing} must be positive"),
        });
    }
    if cell.slices.is_empty() {
        return Err(PlanError::DegenerateCell(cell.id));
    }
    let c = map.cell_size();
    let mut lanes = Vec::new();
    for x in lane_xs(map, cell, lane_spacing) {
        let col = ((x / c).floor() as usize).clamp(cell.first_col(), cell.last_col());
        let s = cell.slice_at(col).expect("column inside cell");
        lanes.push(([x, (s.row_lo as f64 + 0.5) * c], [x, (s.row_hi as f64 + 0.5) * c]));
    }
    Ok(lanes)
}

/// True when the straight segment stays in bounds and touches no obstacle
/// cell. Walks every grid cell the segment crosses; passing exactly through
/// a cell corner checks both side cells.
fn segment_clear(map: &WorldMap, a: [f64; 2], b: [f64; 2]) -> bool {
    let (Ok(ca), Ok(cb)) = (map.cell_at(a[0], a[1]), map.cell_at(b[0], b[1])) else {
        return false;
    };
    let free = |col: i64, row: i64| {
        col >= 0
            && row >= 0
            && (col as usize) < map.cols()
            && (row as usize) < map.rows()
            && !map.is_obstacle(CellIndex { col: col as usize, row: row as usize })
    };
    let c = map.cell_size();
    let (mut col, mut row) = (ca.col as i64, ca.row as i64);
    let (end_col, end_row) = (cb.col as i64, cb.row as i64);
    let d = [b[0] - a[0], b[1] - a[1]];
    let step = [d[0].signum() as i64, d[1].signum() as i64];
    let next_t = |p: f64, cell: i64, s: i64, dv: f64| {
        if s == 0 {
            f64::INFINITY
        } else {
            let edge = if s > 0 { (cell + 1) as f64 * c } else { cell as f64 * c };
            (edge - p) / dv
        }
    };
    let mut tx = next_t(a[0], col, step[0], d[0]);
    let mut ty = next_t(a[1], row, step[1], d[1]);
    let dtx = if step[0] == 0 { f64::INFINITY } else { c / d[0].abs() };
    let dty = if step[1] == 0 { f64::INFINITY } else { c / d[1].abs() };
    if !free(col, row) {
        return false;
    }
    while (col, row) != (end_col, end_row) {
        if tx.min(ty) > 1.0 {
            break;
        }
        if (tx - ty).abs() < 1e-12 {
            if !free(col + step[0], row) || !free(col, row + step[1]) {
                return false;
            }
            col += step[0];
            row += step[1];
            tx += dtx;
            ty += dty;
        } else if tx < ty {
            col += step[0];
            tx += dtx;
        } else {
            row += step[1];
            ty += dty;
        }
        if !free(col, row) {
            return false;
        }
    }
    true
}

/// Shortest 8-connected path between free cells without cutting obstacle
/// corners. Costs are 1 per straight move and √2 per diagonal.
pub fn grid_path(map: &WorldMap, from: CellIndex, to: CellIndex) -> Option<Vec<CellIndex>> {
    if map.is_obstacle(from) || map.is_obstacle(to) {
        return None;
    }
    let (cols, rows) = (map.cols() as i64, map.rows() as i64);
    let n = map.cols() * map.rows();
    let start = map.linear(from);
    let goal = map.linear(to);
    // Integer costs keep ordering exact: 1000 straight, 1414 diagonal.
    let mut cost = vec![u64::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    cost[start] = 0;
    heap.push(Reverse((0u64, start)));
    while let Some(Reverse((d, k))) = heap.pop() {
        if d > cost[k] {
            continue;
        }
        if k == goal {
            break;
        }
        let (c0, r0) = ((k % map.cols()) as i64, (k / map.cols()) as i64);
        for (dc, dr) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (c1, r1) = (c0 + dc, r0 + dr);
            if c1 < 0 || r1 < 0 || c1 >= cols || r1 >= rows {
                continue;
            }
            let k1 = (r1 * cols + c1) as usize;
            if map.is_obstacle_linear(k1) {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal
                && (map.is_obstacle_linear((r0 * cols + c1) as usize) || map.is_obstacle_linear((r1 * cols + c0) as usize))
            {
                continue;
            }
            let nd = d + if diagonal { 1414 } else { 1000 };
            if nd < cost[k1] {
                cost[k1] = nd;
                parent[k1] = k;
                heap.push(Reverse((nd, k1)));
            }
        }
    }
    if cost[goal] == u64::MAX {
        return None;
    }
    let mut path = vec![goal];
    while *path.last().unwrap() != start {
        path.push(parent[*path.last().unwrap()]);
    }
    path.reverse();
    Some(path.into_iter().map(|k| map.unlinear(k)).collect())
}

/// Drops interior points where the move direction does not change.
fn simplify(cells: &[CellIndex]) -> Vec<CellIndex> {
    if cells.len() <= 2 {
        return cells.to_vec();
    }
    let dir = |a: CellIndex, b: CellIndex| (b.col as i64 - a.col as i64, b.row as i64 - a.row as i64);
    let mut out = vec![cells[0]];
    for w in cells.windows(3) {
        if dir(w[0], w[1]) != dir(w[1], w[2]) {
            out.push(w[1]);
        }
    }
    out.push(cells[cells.len() - 1]);
    out
}

/// Appends an obstacle-free route from the path's end to `to`.
fn route(map: &WorldMap, path: &mut PlannedPath, to: [f64; 2], tag: SegmentTag, cell_id: usize) -> Result<()> {
    let from = path.last();
    if segment_clear(map, from, to) {
        path.push(to, tag);
        return Ok(());
    }
    let unreachable = || PlanError::Unreachable { cell: cell_id, x: to[0], y: to[1] };
    let a = map.cell_at(from[0], from[1]).map_err(|_| unreachable())?;
    let b = map.cell_at(to[0], to[1]).map_err(|_| unreachable())?;
    let cells = grid_path(map, a, b).ok_or_else(unreachable)?;
    // Endpoints may sit off their cell centers; enter and leave the grid
    // route through the centers so no leg cuts a corner.
    let pts = simplify(&cells);
    for idx in &pts {
        let (x, y) = map.cell_center(*idx);
        path.push([x, y], tag);
    }
    path.push(to, tag);
    Ok(())
}

/// Lane order variant: reversed lane order and/or starting at the top.
fn variant(lanes: &[([f64; 2], [f64; 2])], reverse: bool, start_top: bool) -> Vec<[f64; 2]> {
    let order: Vec<_> = if reverse { lanes.iter().rev().collect() } else { lanes.iter().collect() };
    let mut pts = Vec::with_capacity(order.len() * 2);
    for (k, &&(bottom, top)) in order.iter().enumerate() {
        if (k % 2 == 0) != start_top {
            pts.push(bottom);
            pts.push(top);
        } else {
            pts.push(top);
            pts.push(bottom);
        }
    }
    pts
}

/// Complete-coverage plan: cells visited greedily by nearest entry point,
/// lawnmower inside each, shortest grid transits between.
pub fn bcd_plan(map: &WorldMap, start: [f64; 2], altitude: f64, lane_spacing: f64) -> Result<PlannedPath> {
    match map.cell_at(start[0], start[1]) {
        Ok(c) if !map.is_obstacle(c) => {}
        _ => return Err(PlanError::BadStart { x: start[0], y: start[1] }),
    }
    let cells = bcd_decompose(map);
    if cells.is_empty() {
        return Err(PlanError::NoFreeCell);
    }
    let mut lanes = Vec::with_capacity(cells.len());
    for cell in &cells {
        lanes.push(lawnmower(map, cell, lane_spacing)?);
    }
    let mut visited = vec![false; cells.len()];
    let mut path = PlannedPath::new(altitude, start);
    for _ in 0..cells.len() {
        let here = path.last();
        let mut best: Option<(f64, usize, Vec<[f64; 2]>)> = None;
        for (id, l) in lanes.iter().enumerate() {
            if visited[id] {
                continue;
            }
            for (reverse, top) in [(false, false), (false, true), (true, false), (true, true)] {
                let pts = variant(l, reverse, top);
                let d = dist(here, pts[0]);
                if best.as_ref().is_none_or(|b| d < b.0) {
                    best = Some((d, id, pts));
                }
            }
        }
        let (_, id, pts) = best.expect("an unvisited cell remains");
        visited[id] = true;
        route(map, &mut path, pts[0], SegmentTag::Transit, id)?;
        for (k, &p) in pts.iter().enumerate().skip(1) {
            // Odd steps run along a lane; even steps hop to the next lane.
            let tag = if k % 2 == 1 { SegmentTag::Lane } else { SegmentTag::Transit };
            route(map, &mut path, p, tag, id)?;
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::RobotPose;

    pub(crate) fn rect_map(cols: usize, rows: usize, obstacle: Option<(usize, usize, usize, usize)>) -> WorldMap {
        let mut h = vec![0.0f32; cols * rows];
        if let Some((c0, c1, r0, r1)) = obstacle {
            for r in r0..r1 {
                for c in c0..c1 {
                    h[r * cols + c] = 8.0;
                }
            }
        }
        WorldMap::new(
            cols as f64,
            rows as f64,
            1.0,
            h,
            vec![false; cols * rows],
            "oyster",
            RobotPose::new(0.5, 0.5, 7.0, 0.0, 0.0),
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn empty_rectangle_is_one_cell() {
        let m = rect_map(20, 10, None);
        let cells = bcd_decompose(&m);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].area_cells(), 200);
    }

    #[test]
    fn centered_obstacle_gives_four_cells() {
        let m = rect_map(30, 30, Some((10, 20, 10, 20)));
        let cells = bcd_decompose(&m);
        assert_eq!(cells.len(), 4);
        let total: usize = cells.iter().map(BcdCell::area_cells).sum();
        assert_eq!(total, 900 - 100);
    }

    #[test]
    fn lane_count_formula() {
        // Columns 0..=10 at 1 m cells: centers 0.5..10.5, width 10 m.
        let m = rect_map(11, 5, None);
        let cells = bcd_decompose(&m);
        let lanes = lawnmower(&m, &cells[0], 2.0).unwrap();
        let xs: Vec<f64> = lanes.iter().map(|l| l.0[0]).collect();
        assert_eq!(xs, vec![0.5, 2.5, 4.5, 6.5, 8.5, 10.5]);
        assert_eq!(lawnmower(&m, &cells[0], 50.0).unwrap().len(), 1);
        assert!(lawnmower(&m, &cells[0], 0.0).is_err());
    }

    #[test]
    fn grid_path_avoids_corners() {
        let m = rect_map(30, 30, Some((10, 20, 10, 20)));
        let p = grid_path(&m, CellIndex::new(5, 15), CellIndex::new(25, 15)).unwrap();
        assert!(p.iter().all(|&c| !m.is_obstacle(c)));
        for w in p.windows(2) {
            let (dc, dr) = (w[1].col as i64 - w[0].col as i64, w[1].row as i64 - w[0].row as i64);
            if dc != 0 && dr != 0 {
                assert!(!m.is_obstacle(CellIndex::new(w[1].col, w[0].row)));
                assert!(!m.is_obstacle(CellIndex::new(w[0].col, w[1].row)));
            }
        }
    }

    #[test]
    fn open_map_plan_is_single_lawnmower() {
        let m = rect_map(21, 10, None);
        let p = bcd_plan(&m, [0.5, 0.5], 7.0, 5.0).unwrap();
        p.validate(&m).unwrap();
        assert!(p.tags.iter().all(|&t| t != SegmentTag::Bridge));
        // 5 lanes, each a single vertical run.
        assert_eq!(p.tags.iter().filter(|&&t| t == SegmentTag::Lane).count(), 5);
    }

    #[test]
    fn footprint_spacing_default() {
        let s = nominal_lane_spacing(&CameraModel::default(), 7.0);
        assert!((s - 2.0 * 14.0 * 40f64.to_radians().tan()).abs() < 1e-9);
    }
}
