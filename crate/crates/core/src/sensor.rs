//! Ground-truth camera rendering against the heightfield.
//!
//! Each pixel casts a pinhole ray from the robot. Rays are traced through the
//! grid cell by cell (exact DDA traversal of the piecewise-constant
//! heightfield), so the reported range is the exact distance to the first
//! cell top or cell wall the ray meets.
//!
//! Depth is stored as an 8-bit proximity: `round(255 · max(0, 1 − r/max_range))`,
//! so 255 is at the lens and 0 is at or beyond `max_range`. The inverse used by
//! the expert is [`CameraModel::proximity_to_range`].

use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::SegDepthImage;
use crate::world::{CellIndex, WorldMap, BLOCK};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pose ({x:.3}, {y:.3}) is outside the map")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("pose altitude {z:.3} m is not above the terrain ({terrain:.3} m)")]
    PoseUnderTerrain { z: f64, terrain: f64 },
    #[error("image export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SensorError> = std::result::Result<T, E>;

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn normalize_yaw(deg: f64) -> f64 {
    let mut a = deg.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

pub const PITCH_LIMIT_DEG: f64 = 30.0;

/// Robot pose. Yaw is clockwise-positive seen from above with yaw 0 facing +x;
/// pitch is positive nose-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, z: f64, yaw_deg: f64, pitch_deg: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw_deg: normalize_yaw(yaw_deg),
            pitch_deg: pitch_deg.clamp(-PITCH_LIMIT_DEG, PITCH_LIMIT_DEG),
        }
    }

    /// Horizontal unit heading in world coordinates.
    pub fn heading(&self) -> (f64, f64) {
        let a = self.yaw_deg.to_radians();
        (a.cos(), -a.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub image_w: u32,
    pub image_h: u32,
    /// Boresight elevation relative to the body, degrees (negative looks down).
    pub boresight_tilt_deg: f64,
    pub max_range_m: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            hfov_deg: 80.0,
            vfov_deg: 64.0,
            image_w: 256,
            image_h: 256,
            boresight_tilt_deg: -30.0,
            max_range_m: 20.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        for (name, fov) in [("hfov", self.hfov_deg), ("vfov", self.vfov_deg)] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(SensorError::InvalidCamera(format!("{name} {fov} outside (0, 180)")));
            }
        }
        if self.image_w < 16 || self.image_h < 16 {
            return Err(SensorError::InvalidCamera(format!(
                "image {}x{} smaller than 16x16",
                self.image_w, self.image_h
            )));
        }
        if !(self.max_range_m > 0.0 && self.max_range_m.is_finite()) {
            return Err(SensorError::InvalidCamera(format!("max_range {} must be positive", self.max_range_m)));
        }
        Ok(())
    }

    pub fn range_to_proximity(&self, r: f64) -> u8 {
        (255.0 * (1.0 - r / self.max_range_m).max(0.0)).round().min(255.0) as u8
    }

    /// Range implied by a proximity value; 0 maps to `max_range`.
    pub fn proximity_to_range(&self, d: u8) -> f64 {
        self.max_range_m * (1.0 - d as f64 / 255.0)
    }

    /// Largest range whose proximity is still at least 1. Hits farther than
    /// this would encode as "nothing there" and are treated as misses.
    pub fn effective_range(&self) -> f64 {
        self.max_range_m * (1.0 - 0.5 / 255.0)
    }

    /// World-frame unit ray through continuous pixel coordinate `(u, v)`,
    /// where `(0, 0)` is the top-left corner of the image.
    pub fn ray_direction(&self, pose: &RobotPose, u: f64, v: f64) -> [f64; 3] {
        let basis = CameraBasis::new(self, pose);
        let xn = (2.0 * u / self.image_w as f64 - 1.0) * basis.tan_h;
        let yn = (1.0 - 2.0 * v / self.image_h as f64) * basis.tan_v;
        basis.direction(xn, yn)
    }
}

struct CameraBasis {
    forward: [f64; 3],
    right: [f64; 3],
    up: [f64; 3],
    tan_h: f64,
    tan_v: f64,
}

impl CameraBasis {
    fn new(cam: &CameraModel, pose: &RobotPose) -> Self {
        let (fx, fy) = pose.heading();
        let p = (pose.pitch_deg + cam.boresight_tilt_deg).to_radians();
        let (sp, cp) = p.sin_cos();
        Self {
            forward: [cp * fx, cp * fy, sp],
            // Image right is a clockwise quarter turn from the heading.
            right: [fy, -fx, 0.0],
            up: [-sp * fx, -sp * fy, cp],
            tan_h: (cam.hfov_deg.to_radians() / 2.0).tan(),
            tan_v: (cam.vfov_deg.to_radians() / 2.0).tan(),
        }
    }

    #[inline]
    fn direction(&self, xn: f64, yn: f64) -> [f64; 3] {
        let d = [
            self.forward[0] + xn * self.right[0] + yn * self.up[0],
            self.forward[1] + xn * self.right[1] + yn * self.up[1],
            self.forward[2] + xn * self.right[2] + yn * self.up[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub cell: CellIndex,
}

/// First intersection of a ray with the heightfield within `max_range`.
///
/// Walks coarse blocks of the grid and skips those the ray passes entirely
/// above. Inside a candidate block it walks the cells the ray's ground track
/// passes through; in each cell the ray hits either the cell wall on entry
/// (ray already at or below the cell top) or the cell top plane while
/// descending.
pub fn cast_ray(map: &WorldMap, origin: [f64; 3], dir: [f64; 3], max_range: f64) -> Option<RayHit> {
    let c = map.cell_size();
    let bsize = c * BLOCK as f64;
    let (cols, rows) = (map.cols(), map.rows());
    let (bcols, brows) = (cols.div_ceil(BLOCK) as i64, rows.div_ceil(BLOCK) as i64);
    let [ox, oy, oz] = origin;
    let [dx, dy, dz] = dir;
    let hmax = map.max_height() as f64;

    let mut t = 0.0;
    if oz > hmax {
        if dz >= 0.0 {
            return None;
        }
        t = (oz - hmax) / -dz;
        if t > max_range {
            return None;
        }
    }
    let px = ox + dx * t;
    let py = oy + dy * t;
    if px < 0.0 || py < 0.0 || px >= cols as f64 * c || py >= rows as f64 * c {
        return None;
    }
    let mut bi = ((px / bsize).floor() as i64).clamp(0, bcols - 1);
    let mut bj = ((py / bsize).floor() as i64).clamp(0, brows - 1);
    let (step_i, mut t_max_x, t_delta_x) = axis_setup(px, dx, bi, bsize, t);
    let (step_j, mut t_max_y, t_delta_y) = axis_setup(py, dy, bj, bsize, t);

    loop {
        let t_exit = t_max_x.min(t_max_y).min(max_range);
        let z_low = oz + dz * if dz < 0.0 { t_exit } else { t };
        if z_low <= map.block_max(bi as usize, bj as usize) as f64 {
            if let Some(hit) = cast_in_block(map, origin, dir, t, t_exit, bi as usize, bj as usize) {
                return Some(hit);
            }
        }
        if t_exit >= max_range {
            return None;
        }
        if t_max_x < t_max_y {
            bi += step_i;
            t = t_max_x;
            t_max_x += t_delta_x;
        } else {
            bj += step_j;
            t = t_max_y;
            t_max_y += t_delta_y;
        }
        if bi < 0 || bj < 0 || bi >= bcols || bj >= brows {
            return None;
        }
    }
}

/// Cell walk restricted to one block over `[t_start, t_end]`.
fn cast_in_block(
    map: &WorldMap,
    origin: [f64; 3],
    dir: [f64; 3],
    t_start: f64,
    t_end: f64,
    bi: usize,
    bj: usize,
) -> Option<RayHit> {
    let c = map.cell_size();
    let [ox, oy, oz] = origin;
    let [dx, dy, dz] = dir;
    let (i_lo, i_hi) = ((bi * BLOCK) as i64, ((bi + 1) * BLOCK).min(map.cols()) as i64 - 1);
    let (j_lo, j_hi) = ((bj * BLOCK) as i64, ((bj + 1) * BLOCK).min(map.rows()) as i64 - 1);
    let px = ox + dx * t_start;
    let py = oy + dy * t_start;
    let mut i = ((px / c).floor() as i64).clamp(i_lo, i_hi);
    let mut j = ((py / c).floor() as i64).clamp(j_lo, j_hi);
    let (step_i, mut t_max_x, t_delta_x) = axis_setup(px, dx, i, c, t_start);
    let (step_j, mut t_max_y, t_delta_y) = axis_setup(py, dy, j, c, t_start);
    let mut t = t_start;

    loop {
        let cell = CellIndex { col: i as usize, row: j as usize };
        let h = map.height_at(cell) as f64;
        let t_exit = t_max_x.min(t_max_y).min(t_end);
        let z_in = oz + dz * t;
        if z_in <= h {
            return Some(RayHit { range: t, cell });
        }
        if dz < 0.0 {
            let t_top = (oz - h) / -dz;
            if t_top <= t_exit {
                return Some(RayHit { range: t_top.max(t), cell });
            }
        }
        if t_exit >= t_end {
            return None;
        }
        if t_max_x < t_max_y {
            i += step_i;
            t = t_max_x;
            t_max_x += t_delta_x;
        } else {
            j += step_j;
            t = t_max_y;
            t_max_y += t_delta_y;
        }
        if i < i_lo || j < j_lo || i > i_hi || j > j_hi {
            return None;
        }
    }
}

fn axis_setup(p: f64, d: f64, idx: i64, c: f64, t0: f64) -> (i64, f64, f64) {
    if d > 0.0 {
        (1, t0 + ((idx + 1) as f64 * c - p) / d, c / d)
    } else if d < 0.0 {
        (-1, t0 + (idx as f64 * c - p) / d, c / -d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Boolean segmentation plane `I_S`, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl SegMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Option<Self> {
        (data.len() == (width * height) as usize).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// Per-step sensor bundle: segmentation, proximity depth and (once composed) SegDepth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub seg: SegMask,
    pub depth: GrayImage,
    pub segdepth: Option<SegDepthImage>,
}

impl Frame {
    /// Fills `segdepth` from the seg and depth planes.
    pub fn compose(&mut self) -> &SegDepthImage {
        let sd = crate::ir::compose_segdepth(&self.seg, &self.depth).expect("frame planes share dimensions");
        self.segdepth.insert(sd)
    }
}

fn check_pose(map: &WorldMap, pose: &RobotPose) -> Result<()> {
    let idx = map
        .cell_at(pose.x, pose.y)
        .map_err(|_| SensorError::PoseOutOfBounds { x: pose.x, y: pose.y })?;
    let terrain = map.height_at(idx) as f64;
    if !(pose.z > terrain) {
        return Err(SensorError::PoseUnderTerrain { z: pose.z, terrain });
    }
    Ok(())
}

/// Renders the seg and depth planes and collects the linear indices of every
/// cell hit by a ray. The index list is unsorted and may repeat.
pub fn render_with_hits(map: &WorldMap, pose: &RobotPose, cam: &CameraModel) -> Result<(Frame, Vec<u32>)> {
    cam.validate()?;
    check_pose(map, pose)?;
    let (w, h) = (cam.image_w, cam.image_h);
    let basis = CameraBasis::new(cam, pose);
    let origin = [pose.x, pose.y, pose.z];
    let reach = cam.effective_range();
    let mut seg = SegMask::new(w, h);
    let mut depth = GrayImage::new(w, h);
    let mut hits = Vec::with_capacity((w * h) as usize);
    for v in 0..h {
        let yn = (1.0 - 2.0 * (v as f64 + 0.5) / h as f64) * basis.tan_v;
        for u in 0..w {
            let xn = (2.0 * (u as f64 + 0.5) / w as f64 - 1.0) * basis.tan_h;
            let dir = basis.direction(xn, yn);
            if let Some(hit) = cast_ray(map, origin, dir, reach) {
                depth.put_pixel(u, v, Luma([cam.range_to_proximity(hit.range)]));
                seg.set(u, v, map.is_ooi(hit.cell));
                hits.push(map.linear(hit.cell) as u32);
            }
        }
    }
    Ok((Frame { seg, depth, segdepth: None }, hits))
}

/// Renders `I_S` and `I_D` for a pose. `segdepth` is left empty.
pub fn render(map: &WorldMap, pose: &RobotPose, cam: &CameraModel) -> Result<Frame> {
    render_with_hits(map, pose, cam).map(|(f, _)| f)
}

/// Sorted, de-duplicated linear indices from a hit list.
pub fn footprint_from_hits(mut hits: Vec<u32>) -> Vec<u32> {
    hits.sort_unstable();
    hits.dedup();
    hits
}

/// Cells visible in the frame rendered at `pose`: those that some pixel ray
/// hits first within range.
pub fn ground_footprint(map: &WorldMap, pose: &RobotPose, cam: &CameraModel) -> Result<Vec<CellIndex>> {
    let (_, hits) = render_with_hits(map, pose, cam)?;
    Ok(footprint_from_hits(hits).into_iter().map(|k| map.unlinear(k as usize)).collect())
}

// ---------------------------------------------------------------------------
// PNG export
// ---------------------------------------------------------------------------

/// Encodes a mask as a 1-bit grayscale PNG (white = OOI).
pub fn encode_mask_png(mask: &SegMask) -> Result<Vec<u8>> {
    let (w, h) = mask.dimensions();
    let stride = (w as usize).div_ceil(8);
    let mut packed = vec![0u8; stride * h as usize];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                packed[y as usize * stride + x as usize / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| SensorError::Export(e.to_string()))?;
        writer.write_image_data(&packed).map_err(|e| SensorError::Export(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>> {
    encode_png(img.as_raw(), img.width(), img.height(), png::ColorType::Grayscale)
}

pub(crate) fn encode_png(data: &[u8], w: u32, h: u32, color: png::ColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| SensorError::Export(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| SensorError::Export(e.to_string()))?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct FrameSidecar<'a> {
    pose: &'a RobotPose,
    camera: &'a CameraModel,
    seg: String,
    depth: String,
    segdepth: Option<String>,
}

/// Writes `<stem>_seg.png`, `<stem>_depth.png`, `<stem>_segdepth.png` (when
/// composed) and `<stem>.json` into `dir`.
pub fn export_frame(frame: &Frame, pose: &RobotPose, cam: &CameraModel, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let seg_name = format!("{stem}_seg.png");
    let depth_name = format!("{stem}_depth.png");
    std::fs::write(dir.join(&seg_name), encode_mask_png(&frame.seg)?)?;
    std::fs::write(dir.join(&depth_name), encode_gray_png(&frame.depth)?)?;
    let mut sd_name = None;
    if let Some(sd) = &frame.segdepth {
        let name = format!("{stem}_segdepth.png");
        std::fs::write(dir.join(&name), sd.to_png()?)?;
        sd_name = Some(name);
    }
    let sidecar = FrameSidecar { pose, camera: cam, seg: seg_name, depth: depth_name, segdepth: sd_name };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| SensorError::Export(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::DEFAULT_OBSTACLE_THRESHOLD;

    pub(crate) fn flat_map(extent: f64, ooi: bool) -> WorldMap {
        let cols = (extent / 0.25) as usize;
        let n = cols * cols;
        WorldMap::new(
            extent,
            extent,
            0.25,
            vec![0.0; n],
            vec![ooi; n],
            "oyster",
            RobotPose::new(extent / 2.0, extent / 2.0, 5.0, 0.0, 0.0),
            DEFAULT_OBSTACLE_THRESHOLD,
        )
        .unwrap()
    }

    fn odd_camera() -> CameraModel {
        CameraModel { image_w: 17, image_h: 17, ..CameraModel::default() }
    }

    #[test]
    fn yaw_normalization_range() {
        assert_eq!(normalize_yaw(180.0), 180.0);
        assert_eq!(normalize_yaw(-180.0), 180.0);
        assert_eq!(normalize_yaw(190.0), -170.0);
        assert_eq!(normalize_yaw(-540.0), 180.0);
        assert_eq!(normalize_yaw(359.0), -1.0);
    }

    #[test]
    fn flat_floor_center_ray_at_minus_45() {
        let map = flat_map(40.0, false);
        // Body pitch -15 plus boresight -30 puts the center ray at -45 degrees.
        let pose = RobotPose::new(20.0, 20.0, 5.0, 0.0, -15.0);
        let cam = odd_camera();
        let frame = render(&map, &pose, &cam).unwrap();
        assert_eq!(frame.depth.get_pixel(8, 8).0[0], 165);
        let dir = cam.ray_direction(&pose, 8.5, 8.5);
        let hit = cast_ray(&map, [20.0, 20.0, 5.0], dir, 20.0).unwrap();
        assert!((hit.range - 5.0 / 45f64.to_radians().sin()).abs() < 1e-9);
    }

    #[test]
    fn upward_center_ray_misses() {
        let map = flat_map(40.0, true);
        let pose = RobotPose::new(20.0, 20.0, 5.0, 0.0, 30.0);
        let frame = render(&map, &pose, &odd_camera()).unwrap();
        assert_eq!(frame.depth.get_pixel(8, 8).0[0], 0);
        assert!(!frame.seg.get(8, 8));
    }

    #[test]
    fn ooi_hit_sets_seg() {
        let map = flat_map(40.0, true);
        let pose = RobotPose::new(20.0, 20.0, 5.0, 0.0, 0.0);
        let frame = render(&map, &pose, &odd_camera()).unwrap();
        assert!(frame.seg.get(8, 16));
        assert!(frame.depth.get_pixel(8, 16).0[0] > 0);
    }

    #[test]
    fn pose_under_terrain_is_error() {
        let map = flat_map(20.0, false);
        let pose = RobotPose::new(10.0, 10.0, -1.0, 0.0, 0.0);
        assert!(matches!(render(&map, &pose, &odd_camera()), Err(SensorError::PoseUnderTerrain { .. })));
        let pose = RobotPose::new(25.0, 10.0, 5.0, 0.0, 0.0);
        assert!(matches!(render(&map, &pose, &odd_camera()), Err(SensorError::PoseOutOfBounds { .. })));
    }

    #[test]
    fn camera_above_horizon_has_empty_footprint() {
        let map = flat_map(40.0, false);
        // Tilt up so even the lowest ray points above the horizon.
        let cam = CameraModel { boresight_tilt_deg: 40.0, ..odd_camera() };
        let pose = RobotPose::new(20.0, 20.0, 5.0, 0.0, 0.0);
        assert!(ground_footprint(&map, &pose, &cam).unwrap().is_empty());
    }

    #[test]
    fn heading_convention_is_clockwise() {
        let p = RobotPose::new(0.0, 0.0, 0.0, 90.0, 0.0);
        let (hx, hy) = p.heading();
        assert!(hx.abs() < 1e-12 && (hy + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_png_is_one_bit() {
        let mut m = SegMask::new(16, 16);
        m.set(3, 4, true);
        let bytes = encode_mask_png(&m).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let reader = dec.read_info().unwrap();
        assert_eq!(reader.info().bit_depth, png::BitDepth::One);
    }
}
