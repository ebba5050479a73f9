//! `idestab`: stability analysis of integral delay equations from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "idestab", version, about = "Stability analysis of linear integral delay equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Fundamental matrix K on [0, horizon·h]
    Fundamental(Common),
    /// Solution from the [initial] function
    Simulate(Common),
    /// Delay Lyapunov matrix U on [-h, h] with residual checks
    Lyapunov(Common),
    /// Positive-definiteness test of K_r over the r schedule
    Test(Common),
    /// Verdicts over the [family] parameter grid, with D-subdivision curves
    Scan(ScanArgs),
    /// D-subdivision curves only
    Boundary(ScanArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML)
    config: PathBuf,
    /// Override numerics.delta (step for K, simulations and the oracle)
    #[arg(long)]
    delta: Option<f64>,
    /// Override numerics.segments (steps per delay for U)
    #[arg(long)]
    segments: Option<usize>,
    /// Use the schedule r = 2..=R_MAX
    #[arg(long)]
    r_max: Option<usize>,
    /// Override numerics.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with 1 on inconclusive verdicts or per-point failures
    #[arg(long)]
    strict: bool,
    /// Output formats, comma separated; defaults to csv,json (+svg for scans)
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// Output directory; overrides output.dir
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ScanArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter grid resolution n×n; overrides family.resolution
    #[arg(long)]
    grid_n: Option<usize>,
    /// Skip the simulation oracle
    #[arg(long)]
    no_oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
    Svg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(commands::run(cli.command))
}
