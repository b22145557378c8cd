//! Survey metrics and the multi-method comparison harness.
//!
//! Coverage is the union of camera footprints intersected with OOI cells.
//! Nadir distance over OOI is reported alongside it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{bcd_plan, brownian_bridge_walk, nominal_lane_spacing, BridgeParams, PlanError};
use crate::policy::{ExpertConfig, PolicyModel};
use crate::sensor::{ground_footprint, CameraModel, SensorError};
use crate::simulate::{
    run_episode, Controller, EpisodeLog, EpisodeMeta, EpisodeStatus, ExpertController, LearnedController,
    PathFollower, SimError, SimParams,
};
use crate::world::{generate_scenario, ScenarioId, ScenarioParams, ScenarioSpec, WorldError, WorldMap};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("log was recorded on world {log} but the map digest is {map}")]
    WorldMismatch { log: String, map: String },
    #[error("log references cell {0} outside the map")]
    CellOutOfRange(u32),
    #[error("nothing to compare: {0}")]
    Empty(&'static str),
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("sensor: {0}")]
    Sensor(#[from] SensorError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("planner: {0}")]
    Plan(#[from] PlanError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Per-episode metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    pub distance_budget: Option<f64>,
    pub distance_traveled: f64,
    pub distance_over_ooi: f64,
    pub pct_ooi_seen: f64,
    /// `pct_ooi_seen / distance_traveled`, zero when nothing was travelled.
    pub efficiency_per_m: f64,
    pub steps: usize,
    pub status: String,
}

fn check_world(map: &WorldMap, log: &EpisodeLog) -> Result<()> {
    let digest = map.digest();
    if log.meta.world_digest != digest {
        return Err(EvalError::WorldMismatch { log: log.meta.world_digest.clone(), map: digest });
    }
    Ok(())
}

fn ooi_fraction(seen: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        seen as f64 / total as f64
    }
}

/// Metrics from the footprint bookkeeping stored in the log.
pub fn compute_metrics(map: &WorldMap, log: &EpisodeLog, distance_budget: Option<f64>) -> Result<MetricsSummary> {
    check_world(map, log)?;
    let n = (map.cols() * map.rows()) as u32;
    let mut seen = vec![false; n as usize];
    let mut over = 0.0;
    for r in &log.records {
        if r.over_ooi {
            over += r.step_distance;
        }
        for &k in &r.newly_seen_ooi {
            if k >= n || !map.ooi_grid()[k as usize] {
                return Err(EvalError::CellOutOfRange(k));
            }
            seen[k as usize] = true;
        }
    }
    let pct = ooi_fraction(seen.iter().filter(|&&s| s).count(), map.ooi_cell_count());
    let dist = log.distance();
    Ok(MetricsSummary {
        method: log.meta.method.clone(),
        scenario: log.meta.scenario.clone(),
        seed: log.meta.seed,
        distance_budget,
        distance_traveled: dist,
        distance_over_ooi: over,
        pct_ooi_seen: pct,
        efficiency_per_m: if dist > 0.0 { pct / dist } else { 0.0 },
        steps: log.records.len(),
        status: log.status.as_str().to_string(),
    })
}

/// Re-renders every logged pose and returns the OOI fraction of the
/// footprint union. Slow; used to cross-check [`compute_metrics`].
pub fn recompute_pct_ooi_seen(map: &WorldMap, log: &EpisodeLog, cam: &CameraModel) -> Result<f64> {
    check_world(map, log)?;
    let mut seen = vec![false; map.cols() * map.rows()];
    for r in &log.records {
        for c in ground_footprint(map, &r.pose, cam)? {
            seen[map.linear(c)] = true;
        }
    }
    let hit = seen.iter().zip(map.ooi_grid()).filter(|(s, o)| **s && **o).count();
    Ok(ooi_fraction(hit, map.ooi_cell_count()))
}

/// `pct_ooi_seen` after each recorded step.
pub fn coverage_curve(map: &WorldMap, log: &EpisodeLog) -> Vec<f64> {
    let total = map.ooi_cell_count();
    let mut seen = 0;
    log.records
        .iter()
        .map(|r| {
            seen += r.newly_seen_ooi.len();
            ooi_fraction(seen, total)
        })
        .collect()
}

/// A method under comparison.
#[derive(Debug, Clone)]
pub enum Method {
    Expert(ExpertConfig),
    Learned(Arc<PolicyModel>),
    BrownianBridge(BridgeParams),
    /// Lane spacing in meters; `None` derives it from the camera footprint.
    Bcd(Option<f64>),
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Expert(_) => "expert",
            Method::Learned(_) => "learned",
            Method::BrownianBridge(_) => "brownian_bridge",
            Method::Bcd(_) => "bcd",
        }
    }

    /// JSON description for the report's config echo.
    pub fn describe(&self) -> serde_json::Value {
        match self {
            Method::Expert(c) => serde_json::json!({"method": "expert", "config": c}),
            Method::Learned(m) => serde_json::json!({"method": "learned", "model_digest": m.digest()}),
            Method::BrownianBridge(p) => serde_json::json!({"method": "brownian_bridge", "params": p}),
            Method::Bcd(s) => serde_json::json!({"method": "bcd", "lane_spacing_m": s}),
        }
    }
}

/// Everything shared by the episodes of one comparison.
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
    pub scenarios: Vec<ScenarioId>,
    pub scenario_params: ScenarioParams,
    pub seeds: Vec<u64>,
    pub distance_budget: f64,
    pub sim: SimParams,
    pub camera: CameraModel,
    pub parallel: bool,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Aggregate over seeds for one (method, scenario); scenario `all` pools
/// every scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub scenario: String,
    pub episodes: usize,
    /// Episodes that aborted or ended early (collision, out of bounds, path exhausted).
    pub incomplete: usize,
    pub distance_m: Stat,
    pub distance_over_ooi_m: Stat,
    pub pct_ooi_seen: Stat,
    pub efficiency_per_m: Stat,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonTable {
    pub rows: Vec<MetricsSummary>,
    pub aggregates: Vec<AggregateRow>,
    /// Episode logs in row order; `None` where the episode aborted.
    pub logs: Vec<Option<EpisodeLog>>,
}

impl ComparisonTable {
    pub fn aggregate(&self, method: &str, scenario: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method && a.scenario == scenario)
    }
}

/// Runs one method on one map from the spawn pose.
pub fn run_method(
    map: &WorldMap,
    method: &Method,
    scenario: &str,
    seed: u64,
    sim: &SimParams,
    cam: &CameraModel,
) -> Result<EpisodeLog> {
    let spawn = map.spawn_pose();
    let meta =
        EpisodeMeta { method: method.id().to_string(), scenario: scenario.to_string(), seed, world_digest: map.digest() };
    let mut controller: Box<dyn Controller + '_> = match method {
        Method::Expert(cfg) => Box::new(ExpertController { config: *cfg }),
        Method::Learned(model) => Box::new(LearnedController::new(model)),
        Method::BrownianBridge(p) => {
            let path = brownian_bridge_walk(map, [spawn.x, spawn.y], spawn.z, p, seed)?;
            Box::new(PathFollower::new("brownian_bridge", path, sim.step_length()))
        }
        Method::Bcd(spacing) => {
            let s = spacing.unwrap_or_else(|| nominal_lane_spacing(cam, spawn.z));
            let path = bcd_plan(map, [spawn.x, spawn.y], spawn.z, s)?;
            Box::new(PathFollower::new("bcd", path, sim.step_length()))
        }
    };
    Ok(run_episode(map, spawn, controller.as_mut(), sim, cam, meta)?)
}

fn aborted_row(method: &str, scenario: &str, seed: u64, budget: f64, err: &EvalError) -> MetricsSummary {
    MetricsSummary {
        method: method.to_string(),
        scenario: scenario.to_string(),
        seed,
        distance_budget: Some(budget),
        distance_traveled: 0.0,
        distance_over_ooi: 0.0,
        pct_ooi_seen: 0.0,
        efficiency_per_m: 0.0,
        steps: 0,
        status: format!("aborted: {err}"),
    }
}

fn is_complete(status: &str) -> bool {
    status == EpisodeStatus::BudgetExhausted.as_str()
}

fn aggregate_rows(rows: &[MetricsSummary], methods: &[String], scenarios: &[String]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    let mut all_scen: Vec<&str> = scenarios.iter().map(String::as_str).collect();
    all_scen.push("all");
    for m in methods {
        for &s in &all_scen {
            let sel: Vec<&MetricsSummary> =
                rows.iter().filter(|r| &r.method == m && (s == "all" || r.scenario == s)).collect();
            if sel.is_empty() {
                continue;
            }
            let ok: Vec<&&MetricsSummary> = sel.iter().filter(|r| !r.status.starts_with("aborted")).collect();
            let col = |f: fn(&MetricsSummary) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            out.push(AggregateRow {
                method: m.clone(),
                scenario: s.to_string(),
                episodes: sel.len(),
                incomplete: sel.iter().filter(|r| !is_complete(&r.status)).count(),
                distance_m: col(|r| r.distance_traveled),
                distance_over_ooi_m: col(|r| r.distance_over_ooi),
                pct_ooi_seen: col(|r| r.pct_ooi_seen),
                efficiency_per_m: col(|r| r.efficiency_per_m),
            });
        }
    }
    out
}

/// Runs every (method, scenario, seed) at the same distance budget.
///
/// Episode failures become rows with an `aborted` status. Results are in
/// (scenario, seed, method) order whatever the scheduling.
pub fn compare(cfg: &CompareConfig) -> Result<ComparisonTable> {
    if cfg.methods.is_empty() || cfg.scenarios.is_empty() || cfg.seeds.is_empty() {
        return Err(EvalError::Empty("need at least one method, scenario and seed"));
    }
    let step = cfg.sim.step_length();
    let sim = SimParams {
        distance_budget: Some(cfg.distance_budget),
        max_steps: cfg.sim.max_steps.max((cfg.distance_budget / step).ceil() as usize + 1),
        ..cfg.sim
    };
    let mut worlds = Vec::new();
    for &sid in &cfg.scenarios {
        for &seed in &cfg.seeds {
            let spec = ScenarioSpec::new(sid, seed).with_params(cfg.scenario_params);
            worlds.push((sid, seed, generate_scenario(&spec)?));
        }
    }
    let jobs: Vec<(usize, usize)> =
        (0..worlds.len()).flat_map(|w| (0..cfg.methods.len()).map(move |m| (w, m))).collect();
    let run = |&(w, m): &(usize, usize)| {
        let (sid, seed, map) = &worlds[w];
        let method = &cfg.methods[m];
        let res = run_method(map, method, sid.as_str(), *seed, &sim, &cfg.camera)
            .and_then(|log| compute_metrics(map, &log, Some(cfg.distance_budget)).map(|row| (row, log)));
        match res {
            Ok((row, log)) => (row, Some(log)),
            Err(e) => (aborted_row(method.id(), sid.as_str(), *seed, cfg.distance_budget, &e), None),
        }
    };
    let results: Vec<(MetricsSummary, Option<EpisodeLog>)> =
        if cfg.parallel { jobs.par_iter().map(run).collect() } else { jobs.iter().map(run).collect() };
    let (rows, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut method_ids: Vec<String> = Vec::new();
    for m in &cfg.methods {
        if !method_ids.iter().any(|x| x == m.id()) {
            method_ids.push(m.id().to_string());
        }
    }
    let scen: Vec<String> = cfg.scenarios.iter().map(|s| s.as_str().to_string()).collect();
    let aggregates = aggregate_rows(&rows, &method_ids, &scen);
    Ok(ComparisonTable { rows, aggregates, logs })
}

/// One line of the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    pub distance_m: f64,
    pub distance_over_ooi_m: f64,
    pub pct_ooi_seen: f64,
    pub efficiency_per_m: f64,
    pub status: String,
}

impl From<&MetricsSummary> for CsvRow {
    fn from(m: &MetricsSummary) -> Self {
        Self {
            method: m.method.clone(),
            scenario: m.scenario.clone(),
            seed: m.seed,
            distance_m: m.distance_traveled,
            distance_over_ooi_m: m.distance_over_ooi,
            pct_ooi_seen: m.pct_ooi_seen,
            efficiency_per_m: m.efficiency_per_m,
            status: m.status.clone(),
        }
    }
}

pub const CSV_HEADER: [&str; 8] =
    ["method", "scenario", "seed", "distance_m", "distance_over_ooi_m", "pct_ooi_seen", "efficiency_per_m", "status"];

pub fn write_csv(rows: &[MetricsSummary], w: impl std::io::Write) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in rows {
        wr.serialize(CsvRow::from(r))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv(r: impl std::io::Read) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?)
}

/// Fixed-width text table of the aggregates.
pub fn summary_text(table: &ComparisonTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:<20} {:>4} {:>5} {:>16} {:>16} {:>18} {:>22}",
        "method", "scenario", "n", "flag", "distance_m", "over_ooi_m", "pct_ooi_seen", "efficiency_per_m"
    );
    for a in &table.aggregates {
        let _ = writeln!(
            s,
            "{:<16} {:<20} {:>4} {:>5} {:>8.1} ±{:>6.1} {:>8.1} ±{:>6.1} {:>9.4} ±{:>7.4} {:>11.3e} ±{:>9.2e}",
            a.method,
            a.scenario,
            a.episodes,
            if a.incomplete > 0 { format!("{}!", a.incomplete) } else { String::new() },
            a.distance_m.mean,
            a.distance_m.std,
            a.distance_over_ooi_m.mean,
            a.distance_over_ooi_m.std,
            a.pct_ooi_seen.mean,
            a.pct_ooi_seen.std,
            a.efficiency_per_m.mean,
            a.efficiency_per_m.std,
        );
    }
    s
}

const TRACK_COLORS: [[u8; 3]; 6] =
    [[230, 40, 40], [40, 90, 230], [240, 200, 0], [200, 0, 200], [0, 200, 200], [255, 140, 0]];

/// Map raster (sand by height, OOI green, obstacles dark) with one colored
/// polyline per log, `scale` pixels per cell. Row 0 of the image is the
/// top edge of the map.
pub fn trajectory_overlay(map: &WorldMap, logs: &[&EpisodeLog], scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let (cols, rows) = (map.cols() as u32, map.rows() as u32);
    let maxh = map.max_height().max(1e-6);
    let mut img = RgbImage::new(cols * scale, rows * scale);
    for (k, (&h, &o)) in map.heights().iter().zip(map.ooi_grid()).enumerate() {
        let c = map.unlinear(k);
        let px = if map.is_obstacle(c) {
            [60, 60, 60]
        } else if o {
            [30, 160, 60]
        } else {
            let g = 200 - (h / maxh * 60.0).clamp(0.0, 60.0) as u8;
            [g, g, (g as f32 * 0.85) as u8]
        };
        let (x0, y0) = (c.col as u32 * scale, (rows - 1 - c.row as u32) * scale);
        for dy in 0..scale {
            for dx in 0..scale {
                img.put_pixel(x0 + dx, y0 + dy, Rgb(px));
            }
        }
    }
    let cell = map.cell_size();
    let to_px = |x: f64, y: f64| {
        let u = x / cell * scale as f64;
        let v = (rows * scale) as f64 - y / cell * scale as f64;
        (u, v)
    };
    for (i, log) in logs.iter().enumerate() {
        let color = Rgb(TRACK_COLORS[i % TRACK_COLORS.len()]);
        let mut pts: Vec<(f64, f64)> = log.records.iter().map(|r| to_px(r.pose.x, r.pose.y)).collect();
        pts.push(to_px(log.final_pose.x, log.final_pose.y));
        for w in pts.windows(2) {
            draw_line(&mut img, w[0], w[1], color);
        }
    }
    img
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Report envelope written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportJson {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub rows: Vec<MetricsSummary>,
    pub aggregates: Vec<AggregateRow>,
}

/// Writes `results.csv`, `report.json`, `summary.txt` and, for the lowest
/// seed of each scenario, `overlay_<scenario>.png` with every method's track.
/// `worlds` supplies the maps for overlays; scenarios without one are skipped.
pub fn emit_report(
    table: &ComparisonTable,
    dir: &Path,
    config: serde_json::Value,
    worlds: &BTreeMap<(String, u64), WorldMap>,
    overlay_scale: u32,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv_buf = Vec::new();
    write_csv(&table.rows, &mut csv_buf)?;
    fs::write(dir.join("results.csv"), csv_buf)?;
    let report = ReportJson {
        tool_version: crate::TOOL_VERSION.to_string(),
        config,
        rows: table.rows.clone(),
        aggregates: table.aggregates.clone(),
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    fs::write(dir.join("summary.txt"), summary_text(table))?;
    let mut first_seed: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &table.rows {
        let e = first_seed.entry(r.scenario.as_str()).or_insert(r.seed);
        *e = (*e).min(r.seed);
    }
    for (scen, seed) in first_seed {
        let Some(map) = worlds.get(&(scen.to_string(), seed)) else { continue };
        let logs: Vec<&EpisodeLog> = table
            .rows
            .iter()
            .zip(&table.logs)
            .filter(|(r, _)| r.scenario == scen && r.seed == seed)
            .filter_map(|(_, l)| l.as_ref())
            .collect();
        trajectory_overlay(map, &logs, overlay_scale).save(dir.join(format!("overlay_{scen}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_constant_has_zero_std() {
        let s = Stat::of(&[2.0, 2.0, 2.0]);
        assert_eq!(s, Stat { mean: 2.0, std: 0.0 });
        assert_eq!(Stat::of(&[]), Stat { mean: 0.0, std: 0.0 });
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,scenario,seed,distance_m,distance_over_ooi_m,pct_ooi_seen,efficiency_per_m,status\n"
        );
    }
}
