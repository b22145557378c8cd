use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use segnav_core::actuation::{action_to_pwm, protocol_line};
use segnav_core::baselines::PlanError;
use segnav_core::config::RunConfig;
use segnav_core::eval::{self, compute_metrics, run_method, CompareConfig, EvalError, Method};
use segnav_core::policy::{
    load_dataset, train_bc, write_dataset, DatasetMeta, LabeledSample, PolicyError, PolicyModel,
};
use segnav_core::sensor::{export_frame, render, RobotPose, SensorError};
use segnav_core::simulate::{collect_expert_samples, Command, EpisodeLog, SimError, SimParams};
use segnav_core::world::WorldError;
use segnav_core::{generate_scenario, ScenarioId, ScenarioSpec, WorldMap, TOOL_VERSION};
use segnav_server::ServerConfig;

use crate::{Cli, Cmd};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("sensor: {0}")]
    Sensor(#[from] SensorError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("planner: {0}")]
    Plan(#[from] PlanError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

struct Ctx {
    config: RunConfig,
    hash: String,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn provenance(&self, command: &str, seed: u64) -> Value {
        json!({
            "tool_version": TOOL_VERSION,
            "config_hash": self.hash,
            "seed": seed,
            "command": command,
        })
    }
}

/// Writes through a sibling temp file so a failed run leaves no partial artifact.
fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| CliError::Usage(format!("--set {key}: `{part}` is not a table")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(CliError::Usage(format!("--set {key}: unknown key")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).ok_or_else(|| CliError::Usage(format!("--set {key}: unknown key")))?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if cli.overrides.is_empty() {
        return Ok(base);
    }
    let mut v = base.to_value();
    for o in &cli.overrides {
        let (k, raw) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut v, k.trim(), val)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("--set: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let ctx = Ctx { hash: config.hash(), config, out_dir: cli.out_dir.clone() };
    match cli.cmd {
        Cmd::GenWorld { scenario, seed, output } => gen_world(&ctx, &scenario, seed, &output),
        Cmd::Render { world, pose, output } => render_cmd(&ctx, &world, pose.as_deref(), &output),
        Cmd::ExpertLabel { world, steps, seed, output } => expert_label(&ctx, &world, steps, seed, &output),
        Cmd::Train { data, val, epochs, seed, output } => train(&ctx, &data, val.as_deref(), epochs, seed, &output),
        Cmd::Run { world, method, model, seed, budget, output } => {
            run_cmd(&ctx, &world, &method, model.as_deref(), seed, budget, &output)
        }
        Cmd::Compare { methods, scenarios, seeds, budget, parallel, model, output } => {
            compare(&ctx, &methods, &scenarios, seeds, budget, parallel, model.as_deref(), &output)
        }
        Cmd::Serve { addr, static_dir } => serve(&ctx, addr, static_dir.as_deref()),
        Cmd::PwmDump { log, output } => pwm_dump(&ctx, &log, &output),
    }
}

fn parse_scenario(s: &str) -> Result<ScenarioId> {
    s.parse().map_err(|e: WorldError| CliError::Usage(e.to_string()))
}

/// Loads a world and the scenario name recorded in its provenance, falling
/// back to the file stem.
fn load_world_named(ctx: &Ctx, p: &Path) -> Result<(WorldMap, String)> {
    let path = ctx.path(p);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let map = WorldMap::from_json(&text)?;
    let name = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v.pointer("/provenance/scenario").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok((map, name))
}

fn gen_world(ctx: &Ctx, scenario: &str, seed: u64, output: &Path) -> Result<()> {
    let sid = parse_scenario(scenario)?;
    let map = generate_scenario(&ScenarioSpec::new(sid, seed).with_params(ctx.config.scenario))?;
    let mut prov = ctx.provenance("gen-world", seed);
    prov["scenario"] = json!(sid.as_str());
    prov["world_digest"] = json!(map.digest());
    let out = ctx.path(output);
    write_file(&out, (map.to_json_with_provenance(Some(prov)) + "\n").as_bytes())?;
    println!("{} {} {}", sid.as_str(), map.digest(), out.display());
    Ok(())
}

fn parse_pose(s: &str) -> Result<RobotPose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--pose: {e}")))?;
    if v.len() != 5 || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Usage("--pose expects five finite numbers x,y,z,yaw,pitch".into()));
    }
    Ok(RobotPose::new(v[0], v[1], v[2], v[3], v[4]))
}

fn render_cmd(ctx: &Ctx, world: &Path, pose: Option<&str>, output: &Path) -> Result<()> {
    let (map, _) = load_world_named(ctx, world)?;
    let pose = match pose {
        Some(s) => parse_pose(s)?,
        None => map.spawn_pose(),
    };
    let mut frame = render(&map, &pose, &ctx.config.camera)?;
    frame.compose();
    let prefix = ctx.path(output);
    let dir = prefix.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = prefix
        .file_name()
        .ok_or_else(|| CliError::Usage("-o needs a file prefix".into()))?
        .to_string_lossy()
        .into_owned();
    export_frame(&frame, &pose, &ctx.config.camera, &dir, &stem)?;
    let side = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))?;
    v["world_digest"] = json!(map.digest());
    v["provenance"] = ctx.provenance("render", 0);
    write_file(&side, (serde_json::to_string_pretty(&v).expect("sidecar serializes") + "\n").as_bytes())?;
    println!("{}", side.display());
    Ok(())
}

fn expert_label(ctx: &Ctx, world: &Path, steps: usize, seed: u64, output: &Path) -> Result<()> {
    if steps == 0 {
        return Err(CliError::Usage("--steps must be positive".into()));
    }
    let (map, name) = load_world_named(ctx, world)?;
    let c = &ctx.config;
    let samples = collect_expert_samples(&map, &name, steps, &c.sim, &c.camera, &c.expert, &c.collect, seed)?;
    let meta = DatasetMeta::describe(&samples, TOOL_VERSION, &ctx.hash, seed);
    let dir = ctx.path(output);
    write_dataset(&dir, &samples, &meta)?;
    println!("{} samples -> {}", samples.len(), dir.display());
    Ok(())
}

fn train(
    ctx: &Ctx,
    data: &[PathBuf],
    val: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
    output: &Path,
) -> Result<()> {
    let mut train_set: Vec<LabeledSample> = Vec::new();
    let mut sources = Vec::new();
    for d in data {
        let (s, meta) = load_dataset(&ctx.path(d))?;
        sources.push(json!({"path": d, "samples": s.len(), "seed": meta.map(|m| m.seed)}));
        train_set.extend(s);
    }
    let val_set = match val {
        Some(v) => load_dataset(&ctx.path(v))?.0,
        None => Vec::new(),
    };
    let mut cfg = ctx.config.train;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (model, report) = train_bc(ctx.config.architecture, &train_set, &val_set, &cfg)?;
    let mut prov = ctx.provenance("train", cfg.seed);
    prov["train"] = json!(cfg);
    prov["datasets"] = json!(sources);
    let out = ctx.path(output);
    write_file(&out, (model.to_json(Some(prov)) + "\n").as_bytes())?;
    let report_path = out.with_extension("report.json");
    let body = json!({"provenance": ctx.provenance("train", cfg.seed), "report": report});
    write_file(&report_path, (serde_json::to_string_pretty(&body).expect("report serializes") + "\n").as_bytes())?;
    let shown = report.validation.unwrap_or(report.train);
    println!(
        "model {} exact yaw {:.3} pitch {:.3} within-one yaw {:.3} pitch {:.3} ({} samples)",
        report.model_digest, shown.exact[0], shown.exact[1], shown.within_one[0], shown.within_one[1], shown.samples
    );
    Ok(())
}

fn load_model(ctx: &Ctx, model: Option<&Path>) -> Result<Arc<PolicyModel>> {
    let p = model.ok_or_else(|| CliError::Usage("method `learned` needs --model".into()))?;
    Ok(Arc::new(PolicyModel::load(ctx.path(p), None)?))
}

fn parse_method(ctx: &Ctx, name: &str, model: Option<&Path>) -> Result<Method> {
    let c = &ctx.config;
    Ok(match name.trim().to_ascii_lowercase().as_str() {
        "expert" => Method::Expert(c.expert),
        "learned" => Method::Learned(load_model(ctx, model)?),
        "bb" | "brownian_bridge" | "bridge" => Method::BrownianBridge(c.bridge),
        "bcd" => Method::Bcd(c.bcd.lane_spacing_m),
        other => return Err(CliError::Usage(format!("unknown method `{other}` (expert, learned, bb, bcd)"))),
    })
}

fn budgeted(sim: &SimParams, budget: f64) -> SimParams {
    SimParams {
        distance_budget: Some(budget),
        max_steps: sim.max_steps.max((budget / sim.step_length()).ceil() as usize + 1),
        ..*sim
    }
}

fn run_cmd(
    ctx: &Ctx,
    world: &Path,
    method: &str,
    model: Option<&Path>,
    seed: u64,
    budget: Option<f64>,
    output: &Path,
) -> Result<()> {
    let (map, name) = load_world_named(ctx, world)?;
    let method = parse_method(ctx, method, model)?;
    let budget = budget.or(ctx.config.sim.distance_budget);
    if let Some(b) = budget {
        if !(b.is_finite() && b > 0.0) {
            return Err(CliError::Usage("--budget must be positive".into()));
        }
    }
    let sim = budget.map_or(ctx.config.sim, |b| budgeted(&ctx.config.sim, b));
    let log = run_method(&map, &method, &name, seed, &sim, &ctx.config.camera)?;
    let metrics = compute_metrics(&map, &log, budget)?;
    let mut prov = ctx.provenance("run", seed);
    prov["method"] = method.describe();
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf, Some(prov)).map_err(|e| CliError::Other(e.to_string()))?;
    write_file(&ctx.path(output), &buf)?;
    println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
    Ok(())
}

fn parse_scenarios(s: &str) -> Result<Vec<ScenarioId>> {
    match s.trim() {
        "all" | "oyster" => Ok(ScenarioId::OYSTER.to_vec()),
        "every" => Ok(ScenarioId::ALL.to_vec()),
        list => {
            let mut out: Vec<ScenarioId> = Vec::new();
            for part in list.split(',') {
                let sid = parse_scenario(part.trim())?;
                if !out.contains(&sid) {
                    out.push(sid);
                }
            }
            Ok(out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn compare(
    ctx: &Ctx,
    methods: &[String],
    scenarios: &str,
    seeds: u64,
    budget: f64,
    parallel: usize,
    model: Option<&Path>,
    output: &Path,
) -> Result<()> {
    if seeds == 0 || parallel == 0 {
        return Err(CliError::Usage("--seeds and --parallel must be positive".into()));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(CliError::Usage("--budget must be positive".into()));
    }
    let methods: Vec<Method> = methods.iter().map(|m| parse_method(ctx, m, model)).collect::<Result<_>>()?;
    let scenarios = parse_scenarios(scenarios)?;
    let c = &ctx.config;
    let cfg = CompareConfig {
        methods,
        scenarios,
        scenario_params: c.scenario,
        seeds: (0..seeds).collect(),
        distance_budget: budget,
        sim: c.sim,
        camera: c.camera,
        parallel: parallel > 1,
    };
    let table = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?;
        pool.install(|| eval::compare(&cfg))?
    } else {
        eval::compare(&cfg)?
    };
    let mut worlds = BTreeMap::new();
    for &sid in &cfg.scenarios {
        let map = generate_scenario(&ScenarioSpec::new(sid, 0).with_params(c.scenario))?;
        worlds.insert((sid.as_str().to_string(), 0), map);
    }
    let echo = json!({
        "run_config": c.to_value(),
        "config_hash": ctx.hash,
        "methods": cfg.methods.iter().map(Method::describe).collect::<Vec<_>>(),
        "scenarios": cfg.scenarios.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        "seeds": cfg.seeds,
        "distance_budget": budget,
    });
    let dir = ctx.path(output);
    eval::emit_report(&table, &dir, echo, &worlds, 2)?;
    let logs_dir = dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(io_err(&logs_dir))?;
    for (row, log) in table.rows.iter().zip(&table.logs) {
        let Some(log) = log else { continue };
        let mut prov = ctx.provenance("compare", row.seed);
        prov["distance_budget"] = json!(budget);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf, Some(prov)).map_err(|e| CliError::Other(e.to_string()))?;
        write_file(&logs_dir.join(format!("{}_{}_{}.jsonl", row.scenario, row.seed, row.method)), &buf)?;
    }
    print!("{}", eval::summary_text(&table));
    Ok(())
}

fn serve(ctx: &Ctx, addr: std::net::SocketAddr, static_dir: Option<&Path>) -> Result<()> {
    let c = &ctx.config;
    let config = ServerConfig {
        camera: c.camera,
        sim: c.sim,
        image_size: c.collect.image_size,
        delta_yaw_deg: c.expert.delta_yaw_deg,
        delta_pitch_deg: c.expert.delta_pitch_deg,
        data_dir: ctx.out_dir.clone(),
        static_dir: static_dir.map(|p| ctx.path(p)),
        config_hash: ctx.hash.clone(),
        ..ServerConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    eprintln!("listening on http://{addr}");
    rt.block_on(segnav_server::serve(addr, config)).map_err(|e| CliError::Other(format!("serve {addr}: {e}")))
}

fn pwm_dump(ctx: &Ctx, log: &Path, output: &Path) -> Result<()> {
    ctx.config.actuation.validate().map_err(|e| CliError::Usage(format!("actuation config: {e}")))?;
    let path = ctx.path(log);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let log = EpisodeLog::read_jsonl(std::io::BufReader::new(file))?;
    let mut text = format!(
        "# segnav pwm tool_version={} config_hash={} seed={} method={} world_digest={}\n",
        TOOL_VERSION, ctx.hash, log.meta.seed, log.meta.method, log.meta.world_digest
    );
    for r in &log.records {
        let Command::Action(a) = r.command else {
            return Err(CliError::Other(format!(
                "step {} of a `{}` episode has no discrete action; only policy episodes map to PWM",
                r.step, log.meta.method
            )));
        };
        text.push_str(&protocol_line(r.step as u64, &action_to_pwm(&a, &ctx.config.actuation)));
        text.push('\n');
    }
    write_file(&ctx.path(output), text.as_bytes())?;
    println!("{} lines", log.records.len());
    Ok(())
}
