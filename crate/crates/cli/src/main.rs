//! `segnav`: world generation, rendering, expert labeling, training,
//! episodes, comparisons, the labeling server and PWM dumps.
//!
//! Exit status is 0 on success, 2 on a usage error and 3 on a runtime
//! failure. Every path argument other than `--config` is resolved against
//! `--out-dir`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "segnav", version, about = "Segmentation-driven survey navigation workbench")]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set sim.speed=1.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Base directory for every input and output path.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a scenario world file.
    GenWorld {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "world.json")]
        output: PathBuf,
    },
    /// Render the SegDepth image and its planes at a pose.
    Render {
        #[arg(long)]
        world: PathBuf,
        /// `x,y,z,yaw_deg,pitch_deg`; defaults to the spawn pose.
        #[arg(long, allow_hyphen_values = true)]
        pose: Option<String>,
        /// Output prefix: writes `<prefix>_segdepth.png`, `<prefix>_seg.png`, `<prefix>_depth.png`, `<prefix>.json`.
        #[arg(short, long, default_value = "frame")]
        output: PathBuf,
    },
    /// Fly the expert and store its labeled frames as a dataset.
    ExpertLabel {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "dataset")]
        output: PathBuf,
    },
    /// Behavior-clone a policy from one or more datasets.
    Train {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, default_value = "model.json")]
        output: PathBuf,
    },
    /// Run one policy or baseline episode and write its log.
    Run {
        #[arg(long)]
        world: PathBuf,
        /// expert, learned, bb (brownian_bridge) or bcd.
        #[arg(long)]
        method: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distance budget in meters.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(short, long, default_value = "episode.jsonl")]
        output: PathBuf,
    },
    /// Run every method on every scenario and seed at one distance budget.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "expert,bb,bcd")]
        methods: Vec<String>,
        /// `all` (the four oyster layouts), `every` (adds rock_reef), or a comma list.
        #[arg(long, default_value = "all")]
        scenarios: String,
        /// Number of seeds, run as 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 400.0)]
        budget: f64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long, default_value = "compare")]
        output: PathBuf,
    },
    /// Serve the labeling API and UI.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Convert the discrete actions of an episode log to thruster PWM lines.
    PwmDump {
        #[arg(long)]
        log: PathBuf,
        #[arg(short, long, default_value = "pwm.txt")]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
