//! `uav-isac`: feasibility checks, hovering and mobile designs, and parameter
//! sweeps for UAV-enabled integrated sensing and communication.
//!
//! Exit codes: 0 success, 2 infeasible, 1 any other error. Log verbosity is
//! read from `ISAC_LOG_LEVEL` (default `warn`).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use uav_isac_core::Point;

#[derive(Debug, Parser)]
#[command(name = "uav-isac", version, about = "Joint UAV maneuver and beamforming design for sensing and communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sensing-feasible locations, reachability and a witness trajectory.
    Feasibility(FeasibilityArgs),
    /// Hovering UAV: best grid location plus beamforming.
    SolveStatic(StaticArgs),
    /// Moving UAV: trajectory plus per-slot beamforming.
    SolveMobile(MobileArgs),
    /// Repeats a design over sensing thresholds or antenna counts.
    Sweep(SweepArgs),
}

/// A sensing threshold: `off` (no requirement) or a value in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold(pub Option<f64>);

impl Threshold {
    pub fn watts(self) -> f64 {
        self.0.map_or(0.0, uav_isac_core::scenario::dbm_to_watts)
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            None => f.write_str("off"),
            Some(d) => write!(f, "{d} dBm"),
        }
    }
}

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    match s.trim() {
        "off" | "none" => Ok(Threshold(None)),
        t => match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Threshold(Some(v))),
            _ => Err(format!("expected a value in dBm or `off`, got `{t}`")),
        },
    }
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => Ok(Point::new(x, y)),
            _ => Err(format!("expected `x,y` in metres, got `{s}`")),
        },
        _ => Err(format!("expected `x,y` in metres, got `{s}`")),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (TOML). Defaults to the built-in reference deployment.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override the sensing threshold (dBm, or `off`).
    #[arg(long, allow_negative_numbers = true, value_parser = parse_threshold)]
    pub gamma_dbm: Option<Threshold>,
    /// Override the number of antennas.
    #[arg(long)]
    pub antennas: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Stopping tolerance of the outer algorithm (bps/Hz).
    #[arg(long, value_parser = parse_positive)]
    pub tol: Option<f64>,
    /// Replace the files of a previous run in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Isac,
    Sf,
    Fhf,
    CommOnly,
    SensingOnly,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid spacing of the location search (m).
    #[arg(long, default_value_t = 25.0, value_parser = parse_positive)]
    pub resolution: f64,
}

#[derive(Debug, Args)]
pub struct StaticArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid spacing of the location search (m).
    #[arg(long, default_value_t = 50.0, value_parser = parse_positive)]
    pub resolution: f64,
    /// Design to run: isac, comm-only or sensing-only.
    #[arg(long, value_enum, default_value_t = Benchmark::Isac)]
    pub benchmark: Benchmark,
    /// Grid spacing of the beampattern map (m).
    #[arg(long, default_value_t = 25.0, value_parser = parse_positive)]
    pub map_resolution: f64,
}

#[derive(Debug, Args)]
pub struct MobileArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Benchmark::Isac)]
    pub benchmark: Benchmark,
    /// Hover location of the fly-hover-fly design as `x,y`. Defaults to the
    /// best hovering location found on a `--resolution` grid.
    #[arg(long, value_parser = parse_point, allow_negative_numbers = true)]
    pub hover: Option<Point>,
    /// Grid spacing of the hover search (m).
    #[arg(long, default_value_t = 100.0, value_parser = parse_positive)]
    pub resolution: f64,
    /// Grid spacing of the feasibility scan that seeds the joint design (m).
    #[arg(long, default_value_t = 25.0, value_parser = parse_positive)]
    pub witness_resolution: f64,
    /// Initial trust-region radius (m).
    #[arg(long, value_parser = parse_positive)]
    pub initial_radius: Option<f64>,
    /// Smallest trust-region radius before giving up on a step (m).
    #[arg(long, value_parser = parse_positive)]
    pub radius_floor: Option<f64>,
    /// Maximum number of outer iterations.
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Slots (1-based, comma separated) that get a beampattern map.
    #[arg(long, value_delimiter = ',')]
    pub maps: Vec<usize>,
    #[arg(long, default_value_t = 25.0, value_parser = parse_positive)]
    pub map_resolution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Gamma,
    Antennas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Static,
    Mobile,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Axis::Gamma)]
    pub axis: Axis,
    /// Comma-separated sweep values: thresholds in dBm (or `off`) or antenna
    /// counts. The threshold sweep defaults to off,-70,-60,-50,-43,-37.
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    #[arg(long, value_enum, default_value_t = Design::Static)]
    pub design: Design,
    /// Grid spacing of the location search (m).
    #[arg(long, default_value_t = 100.0, value_parser = parse_positive)]
    pub resolution: f64,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Feasibility(a) => &a.common,
            Command::SolveStatic(a) => &a.common,
            Command::SolveMobile(a) => &a.common,
            Command::Sweep(a) => &a.common,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISAC_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    // Exit code 2 is reserved for infeasible designs, so usage errors use 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.command.common().jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Feasibility(a) => commands::feasibility(a),
        Command::SolveStatic(a) => commands::solve_static(a),
        Command::SolveMobile(a) => commands::solve_mobile(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
