//! Deterministic rule-based labeler standing in for the human expert.
//!
//! Yaw: seven vertical sectors are scored by far-weighted OOI mass minus a
//! penalty for near non-OOI pixels; the best sector becomes the heading
//! class. With no OOI in view the expert circles to search. Pitch: climb
//! when the upper half of the frame is crowded by near returns, otherwise
//! keep the bottom-center range inside an altitude band.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{ActionClass, PolicyError, Result, HOLD_CLASS, NUM_CLASSES};
use crate::sensor::SegMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Proximity at or above which a non-OOI pixel counts as a near obstacle.
    pub near_proximity: u8,
    /// Penalty per near non-OOI pixel in a sector.
    pub beta: f64,
    /// Upper-half near fractions for pitch classes 0, 1 and 2.
    pub climb_triggers: [f64; 3],
    /// Climb when the bottom-center range falls below this, meters.
    pub range_low_m: f64,
    /// Descend when the bottom-center range exceeds this, meters.
    pub range_high_m: f64,
    /// Camera range used to turn proximity back into meters.
    pub max_range_m: f64,
    pub delta_yaw_deg: f64,
    pub delta_pitch_deg: f64,
    /// Yaw class used when no OOI pixel is in view. `None` holds course.
    pub search_yaw_class: Option<u8>,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            near_proximity: 204,
            beta: 4.0,
            climb_triggers: [0.30, 0.15, 0.05],
            range_low_m: 4.0,
            range_high_m: 9.0,
            max_range_m: 20.0,
            delta_yaw_deg: super::DEFAULT_DELTA_DEG,
            delta_pitch_deg: super::DEFAULT_DELTA_DEG,
            search_yaw_class: Some(0),
        }
    }
}

/// Sector of column `u` in an image `w` pixels wide. Uses the pixel center,
/// so `sector(w − 1 − u) == 6 − sector(u)` for every width.
#[inline]
pub(crate) fn sector(u: u32, w: u32) -> usize {
    ((2 * u as u64 + 1) * NUM_CLASSES as u64 / (2 * w as u64)) as usize
}

/// Per-sector `S_j − P_j` scores.
pub(crate) fn sector_scores(seg: &SegMask, depth: &GrayImage, cfg: &ExpertConfig) -> [f64; NUM_CLASSES] {
    let (w, h) = depth.dimensions();
    let mut far = [0u64; NUM_CLASSES];
    let mut near = [0u64; NUM_CLASSES];
    let d = depth.as_raw();
    let s = seg.as_slice();
    for v in 0..h {
        let row = (v * w) as usize;
        for u in 0..w {
            let k = row + u as usize;
            let j = sector(u, w);
            if s[k] {
                far[j] += 255 - d[k] as u64;
            } else if d[k] >= cfg.near_proximity {
                near[j] += 1;
            }
        }
    }
    let mut out = [0.0; NUM_CLASSES];
    for j in 0..NUM_CLASSES {
        out[j] = far[j] as f64 / 255.0 - cfg.beta * near[j] as f64;
    }
    out
}

/// Best sector: highest score, then closest to center, then rightmost.
fn best_sector(scores: &[f64; NUM_CLASSES]) -> usize {
    let center = HOLD_CLASS as usize;
    let mut best = center;
    for j in 0..NUM_CLASSES {
        let (a, b) = (scores[j], scores[best]);
        let better = a > b
            || (a == b
                && (j.abs_diff(center) < best.abs_diff(center)
                    || (j.abs_diff(center) == best.abs_diff(center) && j > best)));
        if better {
            best = j;
        }
    }
    best
}

/// Fraction of upper-half pixels at or above the near threshold.
fn upper_near_fraction(depth: &GrayImage, cfg: &ExpertConfig) -> f64 {
    let (w, h) = depth.dimensions();
    let upper = &depth.as_raw()[..(w * (h / 2)) as usize];
    if upper.is_empty() {
        return 0.0;
    }
    upper.iter().filter(|&&d| d >= cfg.near_proximity).count() as f64 / upper.len() as f64
}

/// Mean implied range of the bottom-center pixel (two pixels for even widths).
fn bottom_center_range(depth: &GrayImage, cfg: &ExpertConfig) -> f64 {
    let (w, h) = depth.dimensions();
    let cols: &[u32] = if w % 2 == 0 { &[w / 2 - 1, w / 2] } else { &[w / 2] };
    let sum: f64 = cols
        .iter()
        .map(|&u| cfg.max_range_m * (1.0 - depth.get_pixel(u, h - 1)[0] as f64 / 255.0))
        .sum();
    sum / cols.len() as f64
}

/// Expert label for one frame.
pub fn expert_policy(seg: &SegMask, depth: &GrayImage, cfg: &ExpertConfig) -> Result<ActionClass> {
    if seg.dimensions() != depth.dimensions() {
        return Err(PolicyError::DimensionMismatch { expected: depth.dimensions(), found: seg.dimensions() });
    }
    let scores = sector_scores(seg, depth, cfg);

    let near = upper_near_fraction(depth, cfg);
    let climb = cfg.climb_triggers.iter().position(|&t| near > t).map(|c| c as u8);

    let searching = match cfg.search_yaw_class {
        Some(c) if !seg.as_slice().iter().any(|&o| o) => Some(c),
        _ => None,
    };
    if searching.is_none() && scores.iter().all(|&s| s <= 0.0) && climb.is_none() {
        return ActionClass::with_deltas(HOLD_CLASS, HOLD_CLASS, cfg.delta_yaw_deg, cfg.delta_pitch_deg);
    }

    let c_yaw = searching.unwrap_or_else(|| (NUM_CLASSES - 1 - best_sector(&scores)) as u8);
    let c_pitch = climb.unwrap_or_else(|| {
        let r_b = bottom_center_range(depth, cfg);
        if r_b < cfg.range_low_m {
            2
        } else if r_b > cfg.range_high_m {
            4
        } else {
            HOLD_CLASS
        }
    });
    ActionClass::with_deltas(c_yaw, c_pitch, cfg.delta_yaw_deg, cfg.delta_pitch_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    fn blank(w: u32, h: u32, d: u8) -> (SegMask, GrayImage) {
        (SegMask::new(w, h), GrayImage::from_pixel(w, h, Luma([d])))
    }

    #[test]
    fn sectors_partition_and_mirror() {
        for w in [7u32, 16, 64, 100, 256] {
            let mut counts = [0; 7];
            for u in 0..w {
                counts[sector(u, w)] += 1;
                assert_eq!(sector(w - 1 - u, w), 6 - sector(u, w));
            }
            assert!(counts.iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn empty_frame_holds_without_search() {
        let (s, d) = blank(64, 64, 0);
        let cfg = ExpertConfig { search_yaw_class: None, ..ExpertConfig::default() };
        let a = expert_policy(&s, &d, &cfg).unwrap();
        assert_eq!((a.c_yaw, a.c_pitch), (3, 3));
    }

    #[test]
    fn empty_frame_searches_by_default() {
        // Floor out of range reads as 20 m below, so the pitch descends.
        let (s, d) = blank(64, 64, 0);
        let a = expert_policy(&s, &d, &ExpertConfig::default()).unwrap();
        assert_eq!((a.c_yaw, a.c_pitch), (0, 4));
    }

    #[test]
    fn ooi_on_right_turns_clockwise() {
        let (mut s, mut d) = blank(70, 64, 100);
        for v in 0..64 {
            for u in 60..70 {
                s.set(u, v, true);
                d.put_pixel(u, v, Luma([50]));
            }
        }
        let a = expert_policy(&s, &d, &ExpertConfig::default()).unwrap();
        assert_eq!(a.c_yaw, 0);
    }

    #[test]
    fn crowded_upper_half_climbs() {
        let (s, mut d) = blank(64, 64, 100);
        // 40% of the upper half saturated near.
        for v in 0..32 {
            for u in 0..26 {
                d.put_pixel(u, v, Luma([230]));
            }
        }
        let a = expert_policy(&s, &d, &ExpertConfig::default()).unwrap();
        assert_eq!(a.c_pitch, 0);
    }

    #[test]
    fn altitude_band() {
        let cfg = ExpertConfig::default();
        let (mut s, mut d) = blank(64, 64, 0);
        s.set(5, 10, true);
        d.put_pixel(5, 10, Luma([10]));
        // Bottom-center proximity 230 is about 1.96 m.
        for u in [31, 32] {
            d.put_pixel(u, 63, Luma([230]));
        }
        assert_eq!(expert_policy(&s, &d, &cfg).unwrap().c_pitch, 2);
        for u in [31, 32] {
            d.put_pixel(u, 63, Luma([150]));
        }
        assert_eq!(expert_policy(&s, &d, &cfg).unwrap().c_pitch, 3);
        for u in [31, 32] {
            d.put_pixel(u, 63, Luma([60]));
        }
        assert_eq!(expert_policy(&s, &d, &cfg).unwrap().c_pitch, 4);
    }

    #[test]
    fn tie_prefers_center_then_right() {
        let mut sc = [0.0; 7];
        sc[1] = 2.0;
        sc[5] = 2.0;
        assert_eq!(best_sector(&sc), 5);
        sc[3] = 2.0;
        assert_eq!(best_sector(&sc), 3);
    }
}
