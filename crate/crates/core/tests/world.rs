use proptest::prelude::*;
use segnav_core::sensor::RobotPose;
use segnav_core::world::{
    generate_scenario, load_world, ooi_components, save_world, ScenarioId, ScenarioParams, ScenarioSpec, WorldError,
    WorldMap,
};

fn obstacle_regions(map: &WorldMap) -> usize {
    let (cols, rows) = (map.cols(), map.rows());
    let mut seen = vec![false; cols * rows];
    let mut regions = 0;
    for start in 0..cols * rows {
        if seen[start] || !map.is_obstacle_linear(start) {
            continue;
        }
        regions += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (c, r) = (k % cols, k / cols);
            let mut push = |c: usize, r: usize| {
                let n = r * cols + c;
                if !seen[n] && map.is_obstacle_linear(n) {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if c > 0 {
                push(c - 1, r);
            }
            if c + 1 < cols {
                push(c + 1, r);
            }
            if r > 0 {
                push(c, r - 1);
            }
            if r + 1 < rows {
                push(c, r + 1);
            }
        }
    }
    regions
}

#[test]
fn disconnected_paths_with_narrow_gap_has_two_components() {
    let params = ScenarioParams { gap_m: 8.0, ..ScenarioParams::default() };
    let map = generate_scenario(&ScenarioSpec::new(ScenarioId::DisconnectedPaths, 1).with_params(params)).unwrap();
    assert_eq!(ooi_components(&map), 2);
}

#[test]
fn eshape_default_is_one_component() {
    let map = generate_scenario(&ScenarioSpec::new(ScenarioId::EShape, 0)).unwrap();
    assert_eq!(ooi_components(&map), 1);
}

#[test]
fn rock_reef_is_tagged_rock() {
    let map = generate_scenario(&ScenarioSpec::new(ScenarioId::RockReef, 0)).unwrap();
    assert_eq!(map.ooi_kind(), "rock");
    let oyster = generate_scenario(&ScenarioSpec::new(ScenarioId::GridWorld, 0)).unwrap();
    assert_eq!(oyster.ooi_kind(), "oyster");
}

#[test]
fn every_scenario_meets_its_structural_contract() {
    for sid in ScenarioId::ALL {
        for seed in 0..2 {
            let map = generate_scenario(&ScenarioSpec::new(sid, seed)).unwrap();
            let free = map.cols() * map.rows() - map.obstacle_cell_count();
            let frac = map.ooi_cell_count() as f64 / free as f64;
            assert!((0.05..=0.40).contains(&frac), "{sid:?}/{seed}: OOI fraction {frac}");
            assert!(obstacle_regions(&map) >= 2, "{sid:?}/{seed}: fewer than two obstacle regions");
            assert!(map.max_height() >= 5.0);
            let spawn = map.spawn_pose();
            let (h, _) = map.query_cell(spawn.x, spawn.y).unwrap();
            assert!(spawn.z > h as f64);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    for sid in ScenarioId::ALL {
        let spec = ScenarioSpec::new(sid, 7);
        assert_eq!(generate_scenario(&spec).unwrap(), generate_scenario(&spec).unwrap());
    }
    let a = generate_scenario(&ScenarioSpec::new(ScenarioId::GridWorld, 1)).unwrap();
    let b = generate_scenario(&ScenarioSpec::new(ScenarioId::GridWorld, 2)).unwrap();
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn world_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for sid in ScenarioId::ALL {
        let map = generate_scenario(&ScenarioSpec::new(sid, 3)).unwrap();
        let path = dir.path().join(format!("{}.json", sid.as_str()));
        save_world(&map, &path).unwrap();
        assert_eq!(load_world(&path).unwrap(), map);
    }
}

#[test]
fn truncated_world_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = generate_scenario(&ScenarioSpec::new(ScenarioId::EShape, 0)).unwrap();
    let text = map.to_json();
    let path = dir.path().join("cut.json");
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_world(&path), Err(WorldError::Parse { .. })));
}

#[test]
fn unknown_major_version_is_rejected() {
    let map = generate_scenario(&ScenarioSpec::new(ScenarioId::EShape, 0)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&map.to_json()).unwrap();
    v["version"] = serde_json::json!("2.0");
    assert!(matches!(WorldMap::from_json(&v.to_string()), Err(WorldError::UnsupportedVersion(_))));
}

#[test]
fn ooi_on_obstacle_in_file_is_rejected() {
    let mut h = vec![0.0f32; 16];
    h[5] = 6.0;
    let map = WorldMap::new(1.0, 1.0, 0.25, h, vec![false; 16], "oyster", RobotPose::new(0.1, 0.1, 7.0, 0.0, 0.0), 5.0)
        .unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&map.to_json()).unwrap();
    let mut bits = vec![false; 16];
    bits[5] = true;
    let packed = segnav_core::world::pack_bits(&bits);
    use base64::Engine;
    v["ooi_grid"] = serde_json::json!(base64::engine::general_purpose::STANDARD.encode(packed));
    let err = WorldMap::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, WorldError::Invariant(_)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queries_use_half_open_floor_indexing(x in 0.0f64..40.0, y in 0.0f64..30.0) {
        let n = 160 * 120;
        let heights: Vec<f32> = (0..n).map(|k| (k % 7) as f32 * 0.5).collect();
        let ooi: Vec<bool> = (0..n).map(|k| k % 5 == 0 && (k % 7) as f32 * 0.5 < 5.0).collect();
        let map = WorldMap::new(40.0, 30.0, 0.25, heights.clone(), ooi.clone(), "oyster",
            RobotPose::new(1.0, 1.0, 7.0, 0.0, 0.0), 5.0).unwrap();
        let c = map.cell_at(x, y).unwrap();
        prop_assert_eq!(c.col, (x / 0.25).floor() as usize);
        prop_assert_eq!(c.row, (y / 0.25).floor() as usize);
        let (h, o) = map.query_cell(x, y).unwrap();
        let k = c.row * 160 + c.col;
        prop_assert_eq!(h, heights[k]);
        prop_assert_eq!(o, ooi[k]);
    }

    #[test]
    fn out_of_bounds_queries_fail(x in -10.0f64..50.0, y in -10.0f64..40.0) {
        let map = WorldMap::new(40.0, 30.0, 0.25, vec![0.0; 160 * 120], vec![false; 160 * 120], "oyster",
            RobotPose::new(1.0, 1.0, 7.0, 0.0, 0.0), 5.0).unwrap();
        let inside = (0.0..40.0).contains(&x) && (0.0..30.0).contains(&y);
        prop_assert_eq!(map.query_cell(x, y).is_ok(), inside);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generated_maps_satisfy_invariants(seed in 0u64..10_000, which in 0usize..5) {
        let map = generate_scenario(&ScenarioSpec::new(ScenarioId::ALL[which], seed)).unwrap();
        prop_assert_eq!(map.heights().len(), map.cols() * map.rows());
        prop_assert_eq!(map.ooi_grid().len(), map.cols() * map.rows());
        prop_assert!(map.heights().iter().all(|h| h.is_finite() && *h >= 0.0));
        for k in 0..map.cols() * map.rows() {
            prop_assert!(!(map.ooi_grid()[k] && map.is_obstacle_linear(k)));
        }
        prop_assert!(map.ooi_cell_count() > 0);
        prop_assert!(map.obstacle_cell_count() > 0);
    }
}
