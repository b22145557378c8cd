use std::path::Path;
use std::process::{Command, Output};

use segnav_core::eval::read_csv;
use segnav_core::policy::load_dataset;
use segnav_core::simulate::EpisodeLog;
use segnav_core::world::load_world;

fn segnav(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segnav")).arg("--out-dir").arg(out).args(args).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = segnav(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&segnav(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&segnav(d.path(), &["gen-world"])), 2);
    assert_eq!(code(&segnav(d.path(), &["gen-world", "--scenario", "atlantis"])), 2);
    assert_eq!(code(&segnav(d.path(), &["--set", "sim.warp=2", "gen-world", "--scenario", "grid"])), 2);
    assert_eq!(code(&segnav(d.path(), &["--help"])), 0);
    std::fs::write(d.path().join("bad.json"), r#"{"sim": {"warp": 1}}"#).unwrap();
    let cfg = d.path().join("bad.json");
    assert_eq!(code(&segnav(d.path(), &["--config", cfg.to_str().unwrap(), "gen-world", "--scenario", "grid"])), 2);
}

#[test]
fn runtime_errors_exit_3_without_partial_output() {
    let d = tempfile::tempdir().unwrap();
    let o = segnav(d.path(), &["run", "--world", "missing.json", "--method", "expert"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert!(!d.path().join("episode.jsonl").exists());
}

#[test]
fn world_render_and_run_artifacts_carry_provenance() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["--set", "scenario.extent_m=120", "gen-world", "--scenario", "e_shape", "--seed", "9", "-o", "w/e.json"]);
    let map = load_world(p.join("w/e.json")).unwrap();
    assert_eq!(map.width_m(), 120.0);
    let text = std::fs::read_to_string(p.join("w/e.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["provenance"]["seed"], 9);
    assert_eq!(v["provenance"]["scenario"], "e_shape");
    assert_eq!(v["provenance"]["world_digest"], map.digest());

    ok(p, &["--set", "scenario.extent_m=120", "render", "--world", "w/e.json", "-o", "r/spawn"]);
    for f in ["spawn_seg.png", "spawn_depth.png", "spawn_segdepth.png", "spawn.json"] {
        assert!(p.join("r").join(f).is_file(), "{f}");
    }

    let stdout = ok(p, &["run", "--world", "w/e.json", "--method", "expert", "--budget", "30", "-o", "ep.jsonl"]);
    let metrics: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(metrics["scenario"], "e_shape");
    let log = EpisodeLog::read_jsonl(std::fs::File::open(p.join("ep.jsonl")).map(std::io::BufReader::new).unwrap())
        .unwrap();
    assert_eq!(log.meta.world_digest, map.digest());
    assert!(log.distance() <= 30.0 + 1e-9);
    let header = std::fs::read_to_string(p.join("ep.jsonl")).unwrap();
    assert!(header.lines().next().unwrap().contains("\"config_hash\""));

    ok(p, &["pwm-dump", "--log", "ep.jsonl"]);
    let pwm = std::fs::read_to_string(p.join("pwm.txt")).unwrap();
    assert!(pwm.starts_with("# segnav pwm tool_version="));
    assert_eq!(pwm.lines().count(), log.records.len() + 1);
    assert!(pwm.lines().nth(1).unwrap().starts_with("t=0 surge=1500 heave=1500 yaw="));

    ok(p, &["run", "--world", "w/e.json", "--method", "bcd", "--budget", "10", "-o", "bcd.jsonl"]);
    assert_eq!(code(&segnav(p, &["pwm-dump", "--log", "bcd.jsonl", "-o", "bcd.txt"])), 3);
    assert!(!p.join("bcd.txt").exists());
}

#[test]
fn label_train_and_learned_run() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["gen-world", "--scenario", "grid", "-o", "w.json"]);
    ok(p, &["expert-label", "--world", "w.json", "--steps", "40", "-o", "a"]);
    ok(p, &["expert-label", "--world", "w.json", "--steps", "20", "--seed", "1", "-o", "b"]);
    let (samples, meta) = load_dataset(&p.join("a")).unwrap();
    assert_eq!(samples.len(), 40);
    assert_eq!(samples[0].scenario_id.as_deref(), Some("grid_world"));
    assert_eq!(meta.unwrap().samples, 40);
    let out = ok(p, &["train", "--data", "a", "--val", "b", "--epochs", "2", "-o", "m/model.json"]);
    assert!(out.starts_with("model "));
    assert!(p.join("m/model.report.json").is_file());
    assert_eq!(code(&segnav(p, &["run", "--world", "w.json", "--method", "learned"])), 2);
    ok(p, &["run", "--world", "w.json", "--method", "learned", "--model", "m/model.json", "--budget", "20"]);
}

#[test]
fn compare_writes_one_row_per_episode() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let summary = ok(p, &["compare", "--scenarios", "grid_world,rock", "--seeds", "2", "--budget", "20", "-o", "c"]);
    assert!(summary.contains("brownian_bridge"));
    let rows = read_csv(std::fs::File::open(p.join("c/results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    assert!(p.join("c/overlay_rock_reef.png").is_file());
    assert!(p.join("c/logs/grid_world_1_bcd.jsonl").is_file());
    assert_eq!(code(&segnav(p, &["compare", "--seeds", "0"])), 2);
}
