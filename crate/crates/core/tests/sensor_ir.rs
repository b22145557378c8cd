use std::collections::HashSet;

use image::{GrayImage, Luma};
use proptest::prelude::*;
use segnav_core::ir::{colormap, compose_segdepth, decompose_segdepth, ColormapLut};
use segnav_core::sensor::{footprint_from_hits, ground_footprint, render, render_with_hits, CameraModel, RobotPose, SegMask};
use segnav_core::world::WorldMap;

fn flat(extent: f64, z: f32) -> WorldMap {
    let n = (extent / 0.25) as usize;
    WorldMap::new(extent, extent, 0.25, vec![z; n * n], vec![false; n * n], "oyster",
        RobotPose::new(extent / 2.0, extent / 2.0, 5.0, 0.0, 0.0), 5.0).unwrap()
}

fn bumpy(seed: u64) -> WorldMap {
    let n = 160;
    let mut heights = vec![0.0f32; n * n];
    let mut ooi = vec![false; n * n];
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    for k in 0..n * n {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let r = (s >> 33) as u32;
        heights[k] = (r % 200) as f32 / 100.0;
        ooi[k] = r % 3 == 0;
    }
    WorldMap::new(40.0, 40.0, 0.25, heights, ooi, "oyster", RobotPose::new(20.0, 20.0, 6.0, 0.0, 0.0), 5.0).unwrap()
}

#[test]
fn footprint_edges_match_frustum_oracle() {
    let map = flat(60.0, 0.0);
    let cam = CameraModel::default();
    let pose = RobotPose::new(30.0, 30.0, 5.0, 0.0, 0.0);
    // Continuous frustum: the bottom edge sits 62 degrees below horizontal.
    let near_edge = 5.0 / 62f64.to_radians().tan();
    assert!((near_edge - 2.659).abs() < 1e-3);
    // The lowest pixel-center ray is half a pixel inside that edge.
    let tan_v = 32f64.to_radians().tan();
    let yn = -(1.0 - 1.0 / cam.image_h as f64) * tan_v;
    let near_center = 5.0 / (30f64.to_radians() + (-yn).atan()).tan();
    let far_slant = cam.max_range_m * (1.0 - 0.5 / 255.0);
    let far_ground = (far_slant * far_slant - 25.0).sqrt();

    let cells = ground_footprint(&map, &pose, &cam).unwrap();
    let min_col = cells.iter().map(|c| c.col).min().unwrap();
    assert_eq!(min_col, ((30.0 + near_center) / 0.25).floor() as usize);
    assert!(((min_col as f64 * 0.25 - 30.0) - near_edge).abs() < 0.25);
    let max_dist = cells
        .iter()
        .map(|c| {
            let (x, y) = map.cell_center(*c);
            (x - 30.0).hypot(y - 30.0)
        })
        .fold(0.0, f64::max);
    assert!(max_dist <= far_ground + 0.2, "{max_dist} vs {far_ground}");
    assert!(max_dist >= far_ground - 0.5, "{max_dist} vs {far_ground}");
    assert!(cells.iter().all(|c| c.col as f64 * 0.25 >= 30.0));
}

#[test]
fn footprint_matches_rendered_hit_pixels() {
    let map = bumpy(3);
    let cam = CameraModel { image_w: 64, image_h: 64, ..CameraModel::default() };
    let pose = RobotPose::new(20.0, 20.0, 6.0, 35.0, -10.0);
    let (frame, hits) = render_with_hits(&map, &pose, &cam).unwrap();
    let hit_pixels = frame.depth.as_raw().iter().filter(|&&d| d > 0).count();
    assert_eq!(hit_pixels, hits.len());
    let fp: HashSet<u32> = footprint_from_hits(hits).into_iter().collect();
    let gf: HashSet<u32> =
        ground_footprint(&map, &pose, &cam).unwrap().into_iter().map(|c| map.linear(c) as u32).collect();
    assert_eq!(fp, gf);
    let seg_pixels = frame.seg.as_slice().iter().filter(|&&s| s).count();
    let ooi_in_fp = fp.iter().filter(|&&k| map.ooi_grid()[k as usize]).count();
    assert!(seg_pixels >= ooi_in_fp);
}

#[test]
fn lut_matches_published_csv() {
    let published = include_str!("../data/segdepth_lut.csv");
    assert_eq!(ColormapLut::standard().to_csv(), published);
    let parsed = ColormapLut::from_csv(published).unwrap();
    for d in 0..=255u8 {
        assert_eq!(parsed.get(d), colormap(d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_terrain_never_lowers_proximity(
        seed in 0u64..1000,
        yaw in -179.0f64..180.0,
        pitch in -30.0f64..30.0,
        col in 0usize..160,
        row in 0usize..160,
        bump in 0.1f32..8.0,
    ) {
        let map = bumpy(seed);
        let cam = CameraModel { image_w: 32, image_h: 32, ..CameraModel::default() };
        let pose = RobotPose::new(20.0, 20.0, 6.0, yaw, pitch);
        let before = render(&map, &pose, &cam).unwrap();
        let mut heights = map.heights().to_vec();
        let k = row * 160 + col;
        heights[k] += bump;
        let mut ooi = map.ooi_grid().to_vec();
        if heights[k] >= 5.0 {
            ooi[k] = false;
        }
        // Keep the camera above its own cell.
        prop_assume!(!(col == 80 && row == 80));
        let raised = WorldMap::new(40.0, 40.0, 0.25, heights, ooi, "oyster", map.spawn_pose(), 5.0).unwrap();
        let after = render(&raised, &pose, &cam).unwrap();
        for (a, b) in after.depth.as_raw().iter().zip(before.depth.as_raw()) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn render_is_deterministic_and_seg_implies_depth(seed in 0u64..1000, yaw in -179.0f64..180.0) {
        let map = bumpy(seed);
        let cam = CameraModel { image_w: 24, image_h: 24, ..CameraModel::default() };
        let pose = RobotPose::new(20.0, 20.0, 6.0, yaw, 0.0);
        let a = render(&map, &pose, &cam).unwrap();
        let b = render(&map, &pose, &cam).unwrap();
        prop_assert_eq!(&a, &b);
        for (s, d) in a.seg.as_slice().iter().zip(a.depth.as_raw()) {
            prop_assert!(!*s || *d > 0);
        }
    }

    #[test]
    fn compose_has_disjoint_support_and_inverts(
        w in 1u32..24,
        h in 1u32..24,
        data in proptest::collection::vec((any::<bool>(), any::<u8>()), 24 * 24),
    ) {
        let n = (w * h) as usize;
        let seg = SegMask::from_vec(w, h, data[..n].iter().map(|p| p.0).collect()).unwrap();
        let depth = GrayImage::from_fn(w, h, |x, y| Luma([data[(y * w + x) as usize].1]));
        let sd = compose_segdepth(&seg, &depth).unwrap();
        for y in 0..h {
            for x in 0..w {
                let [r, g, b] = sd.pixel(x, y);
                let d = depth.get_pixel(x, y)[0];
                if seg.get(x, y) {
                    prop_assert_eq!([r, g, b], colormap(d));
                    prop_assert!(!(r == g && g == b));
                } else {
                    prop_assert_eq!([r, g, b], [d, d, d]);
                }
            }
        }
        let (s2, d2) = decompose_segdepth(&sd).unwrap();
        prop_assert_eq!(s2, seg);
        prop_assert_eq!(d2, depth);
    }
}
