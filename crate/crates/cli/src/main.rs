//! `ricsim`: runs the simulator stage by stage over an artifact directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ricsim_core::config::{Mode, RunConfig};
use ricsim_core::stages::{self, Layout, Manifest};
use ricsim_core::Result;

/// Every global flag can also be set through the environment variable
/// shown in `--help` (prefix `RICSIM_`).
#[derive(Debug, Parser)]
#[command(name = "ricsim", version, about = "Prediction-led RIC app orchestration simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, env = "RICSIM_CONFIG")]
    config: Option<PathBuf>,
    /// proposed, always-steering, always-sleeping or no-app.
    #[arg(long, global = true, env = "RICSIM_MODE")]
    mode: Option<Mode>,
    #[arg(long, global = true, env = "RICSIM_SEED")]
    seed: Option<u64>,
    /// Evaluation length in simulated seconds.
    #[arg(long, global = true, env = "RICSIM_DURATION")]
    duration: Option<f64>,
    /// Artifact directory.
    #[arg(long, global = true, env = "RICSIM_OUT", default_value = "ricsim-out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the training day and write its volume series.
    Simulate,
    /// Fit the forecaster on the smoothed training series.
    TrainForecaster,
    /// Train the steering xApp and the sleeping rApp offline.
    TrainApps,
    /// Run the evaluation day under the configured mode.
    Evaluate,
    /// Fixed-load segments with the sleeping rApp at each volume.
    Sweep {
        /// Comma-separated volumes in Mbps, ascending.
        #[arg(long, value_delimiter = ',')]
        volumes: Option<Vec<f64>>,
    },
    /// Compare every evaluated mode in the artifact directory.
    Compare,
    /// Re-feed a recorded volume series through prediction and orchestration.
    Replay {
        /// Series CSV (frame_index,mbps); defaults to the training day.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// All stages for the configured mode, then a comparison.
    Run {
        /// Evaluate every mode instead of only the configured one.
        #[arg(long)]
        all_modes: bool,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = g.duration {
        cfg.duration_s = Some(d);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn announce(m: &Manifest, root: &Path) {
    for path in m.outputs.keys() {
        println!("wrote {}", root.join(path).display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let layout = Layout::new(&cli.global.out);
    let root = &cli.global.out;
    match cli.command {
        Command::Simulate => announce(&stages::simulate(&cfg, &layout)?, root),
        Command::TrainForecaster => announce(&stages::train_forecaster(&cfg, &layout)?, root),
        Command::TrainApps => announce(&stages::train_apps(&cfg, &layout)?, root),
        Command::Evaluate => announce(&stages::evaluate(&cfg, &layout)?, root),
        Command::Sweep { volumes } => {
            let (m, rows) = stages::sweep(&cfg, &layout, volumes.as_deref())?;
            println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "volume", "thr", "ee", "drop", "ee_awake", "reachable");
            for r in rows {
                println!(
                    "{:>10.1} {:>10.3} {:>10.5} {:>10.5} {:>10.5} {:>10}",
                    r.volume_mbps, r.throughput_mbps, r.ee_mbits_per_joule, r.drop_rate, r.ee_no_sleep, r.reachable
                );
            }
            announce(&m, root);
        }
        Command::Compare => {
            let (m, report) = stages::compare(&cfg, &layout)?;
            print!("{}", report.to_text());
            announce(&m, root);
        }
        Command::Replay { series } => {
            let series = series.unwrap_or_else(|| layout.raw_series());
            announce(&stages::replay(&cfg, &layout, &series)?, root);
        }
        Command::Run { all_modes } => {
            let modes = if all_modes { Mode::ALL.to_vec() } else { vec![cfg.mode] };
            let report = stages::run(&cfg, &layout, &modes)?;
            print!("{}", report.to_text());
            println!("artifacts in {}", root.display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
