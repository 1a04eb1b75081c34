use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dvsbias::bias::{CameraConstants, TweakTarget};
use dvsbias::events::EventFormat;
use dvsbias::harness::{self, ExperimentReport, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dvsbias", version, about = "DVS bias control simulator")]
struct Cli {
    /// Camera constants file (`key = value` lines).
    #[arg(long, global = true)]
    camera: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Threshold,
    Bandwidth,
    Refractory,
}

impl From<Param> for TweakTarget {
    fn from(p: Param) -> Self {
        match p {
            Param::Threshold => TweakTarget::Threshold,
            Param::Bandwidth => TweakTarget::Bandwidth,
            Param::Refractory => TweakTarget::Refractory,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Events {
    Csv,
    Bin,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario closed loop.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $DVSBIAS_OUT_DIR/<name>, else out/<name>]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        events: Events,
        /// Add the ground-truth provenance column to the event file.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Sweep one tweak open loop.
    Sweep {
        scenario: PathBuf,
        /// Defaults to the scenario's sweep.param.
        #[arg(long, value_enum)]
        param: Option<Param>,
        /// Comma-separated tweak values; defaults to the scenario's sweep.grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
    /// List the bundled scenarios.
    List,
}

fn load(path: &Path, camera: Option<&Path>) -> Result<ScenarioConfig> {
    let camera = camera
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CameraConstants::parse(&text).with_context(|| format!("in {}", p.display()))
        })
        .transpose()?;
    ScenarioConfig::load(path, camera).with_context(|| format!("loading scenario {}", path.display()))
}

fn out_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os("DVSBIAS_OUT_DIR").map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(name)
    })
}

fn summarize(report: &ExperimentReport, dir: &Path) {
    println!(
        "{} ({}): {:.1} s simulated in {:.1} s, {} events, {} actions, step {} us",
        report.scenario, report.mode, report.simulated_s, report.wall_s, report.n_events, report.n_actions, report.step_us
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(f) = &report.fit {
        println!(
            "fit: slope {:.1} Hz, R2 {:.4}, zero-rate sensitivity {:.3}",
            f.slope, f.r_squared, f.x_intercept
        );
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("outputs in {}", dir.display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    let camera = cli.camera.as_deref();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            events,
            ground_truth,
        } => {
            let cfg = load(&scenario, camera)?;
            let dir = out_dir(out, &cfg.name);
            let opts = RunOptions {
                seed,
                out_dir: Some(dir.clone()),
                events: match events {
                    Events::Csv => EventFormat::Csv,
                    Events::Bin => EventFormat::Binary,
                    Events::None => EventFormat::None,
                },
                ground_truth,
            };
            let outcome = harness::run(&cfg, &opts)?;
            summarize(&outcome.report, &dir);
            Ok(outcome.report.passed)
        }
        Command::Sweep {
            scenario,
            param,
            grid,
            seed,
            out,
        } => {
            let cfg = load(&scenario, camera)?;
            let Some(param) = param.map(TweakTarget::from).or(cfg.sweep_param) else {
                bail!("no --param given and the scenario has no sweep.param");
            };
            let grid = grid.unwrap_or_else(|| cfg.sweep_grid.clone());
            if grid.is_empty() {
                bail!("no --grid given and the scenario has no sweep.grid");
            }
            let dir = out_dir(out, &format!("{}_sweep", cfg.name));
            let opts = RunOptions {
                seed,
                out_dir: Some(dir.clone()),
                ..RunOptions::default()
            };
            let outcome = harness::sweep(&cfg, param, &grid, &opts)?;
            println!("tweak,sensitivity,bandwidth_hz,refractory_us,r_input_hz,r_signal_hz,r_noise_hz,r_sn");
            for r in &outcome.report.sweep {
                println!(
                    "{},{:.3},{:.1},{:.1},{:.0},{:.0},{:.0},{}",
                    r.tweak,
                    r.sensitivity,
                    r.bandwidth_hz,
                    r.refractory_s * 1e6,
                    r.r_input_hz,
                    r.r_signal_hz,
                    r.r_noise_hz,
                    r.r_sn.map_or(String::new(), |v| format!("{v:.3}"))
                );
            }
            summarize(&outcome.report, &dir);
            Ok(outcome.report.passed)
        }
        Command::Validate { scenario } => {
            let cfg = load(&scenario, camera)?;
            println!(
                "{}: ok ({} directives, {:.1} s, {}x{}, rate scale {:.5})",
                cfg.name,
                cfg.schedule.directives.len(),
                cfg.duration_s,
                cfg.geometry.width,
                cfg.geometry.height,
                cfg.rate_scale
            );
            Ok(true)
        }
        Command::List => {
            for name in harness::bundled_names() {
                println!("{name}");
            }
            Ok(true)
        }
    }
}
