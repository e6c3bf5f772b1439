//! `vegpattern`: homogeneous analysis, Turing scans, simulations and
//! continuation runs, written as plot-ready CSV and JSON.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use vegpattern::presets::Preset;

/// Error caused by bad input rather than by the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "vegpattern", version, about = "Vegetation pattern bifurcation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Parameter overrides as inline JSON or a path to a JSON file.
    #[arg(long, global = true, value_name = "JSON")]
    pub params: Option<String>,
    /// Base parameter set the overrides apply to.
    #[arg(long, global = true, value_enum, default_value = "calibrated")]
    pub param_set: config::ParamSet,
    /// Domain length; shorthand for `--params '{"L": ...}'`.
    #[arg(long, global = true)]
    pub length: Option<f64>,
    /// Number of grid intervals.
    #[arg(long, global = true, default_value_t = 40)]
    pub grid_n: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for noisy initial conditions.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Integrator option overrides (JSON).
    #[arg(long, global = true, value_name = "JSON")]
    pub integrator: Option<String>,
    /// Continuation option overrides (JSON).
    #[arg(long, global = true, value_name = "JSON")]
    pub continuation: Option<String>,
    /// Initial-condition option overrides (JSON).
    #[arg(long, global = true, value_name = "JSON")]
    pub preset_options: Option<String>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Homogeneous equilibria over a precipitation range.
    Equilibria(EquilibriaArgs),
    /// Mode-by-mode stability of one homogeneous state.
    Stability(StabilityArgs),
    /// Turing roots for a set of domain lengths.
    TuringScan(TuringScanArgs),
    /// Domain length below which no Turing mode exists.
    CriticalSize,
    /// Time integration from a named initial condition.
    Simulate(SimulateArgs),
    /// One continuation run from a given start.
    Continue(ContinueArgs),
    /// The complete bifurcation diagram with the reference comparison.
    Diagram(DiagramArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct EquilibriaArgs {
    #[arg(long, default_value_t = 0.0)]
    pub p_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p_max: f64,
    #[arg(long, default_value_t = 201)]
    pub steps: usize,
    /// Highest mode checked for stability.
    #[arg(long, default_value_t = 64)]
    pub n_max: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct StabilityArgs {
    #[arg(long)]
    pub p: f64,
    /// Which homogeneous state: upper, lower or bare.
    #[arg(long, default_value = "upper")]
    pub branch: String,
    #[arg(long, default_value_t = 64)]
    pub n_max: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct TuringScanArgs {
    /// Domain lengths, comma separated.
    #[arg(long = "lengths", value_delimiter = ',', default_value = "2,4,6,8")]
    pub lengths: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub n_max: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// bare, homogeneous, bump-up, bump-down, bell-perturb-left,
    /// bell-perturb-right or file:<csv>.
    #[arg(long)]
    #[serde(serialize_with = "as_display")]
    pub preset: Preset,
    #[arg(long)]
    pub p: f64,
    /// Time between stored snapshots (default: only first and last).
    #[arg(long)]
    pub snapshot_every: Option<f64>,
    /// Stop after time integration without the final Newton polish.
    #[arg(long)]
    pub no_settle: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ContinueArgs {
    /// Start: bare, upper, lower or file:<csv> (a steady state at `--p`).
    #[arg(long, default_value = "upper")]
    pub from: String,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// +1 follows increasing `p` initially, -1 decreasing.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub direction: f64,
    /// Also write every point's full fields.
    #[arg(long)]
    pub dump_states: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct DiagramArgs {
    /// Also write every point's full fields.
    #[arg(long)]
    pub dump_states: bool,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(&cli) {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<vegpattern::Error>(), Some(vegpattern::Error::InvalidArgument(_)));
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}
