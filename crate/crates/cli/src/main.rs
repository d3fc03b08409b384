//! `varbound`: experiments on local versus mixing variance models.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "varbound",
    version,
    about = "Local volatility versus regime-mixing variance models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the local variance surface on a (t, x) grid.
    Surface(SurfaceArgs),
    /// Simulate a model and price variance and volatility payoffs.
    Price(PriceArgs),
    /// Lower bound on realized variance for paths inside a corridor.
    Bound(BoundArgs),
    /// Binned regression check of the two-factor variance surface.
    #[command(name = "dloc-check")]
    DlocCheck(DlocArgs),
    /// Run the acceptance suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with default values for any of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model (`toy3`).
    #[arg(long)]
    preset: Option<String>,
    /// TOML model file.
    #[arg(long)]
    spec_file: Option<PathBuf>,
    /// Directory for output files; stdout only when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    #[command(flatten)]
    common: Common,
    /// Time axis `start:end:count` [default: 0:3:300].
    #[arg(long = "t", allow_hyphen_values = true)]
    t_axis: Option<String>,
    /// Log-price axis `start:end:count` [default: -2:12:400].
    #[arg(long = "x", allow_hyphen_values = true)]
    x_axis: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Mixing,
    Localvol,
    Dlocalvol,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mixing => "mixing",
            ModelKind::Localvol => "localvol",
            ModelKind::Dlocalvol => "dlocalvol",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PayoffKind {
    Varswap,
    Varcall,
    Volswap,
    All,
}

impl fmt::Display for PayoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayoffKind::Varswap => "varswap",
            PayoffKind::Varcall => "varcall",
            PayoffKind::Volswap => "volswap",
            PayoffKind::All => "all",
        })
    }
}

#[derive(Debug, Args)]
struct PriceArgs {
    #[command(flatten)]
    common: Common,
    /// Model to simulate [default: localvol].
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Payoffs to report [default: all].
    #[arg(long, value_enum)]
    payoff: Option<PayoffKind>,
    /// Variance-call strike [default: 6].
    #[arg(long)]
    strike: Option<f64>,
    /// Number of paths [default: 200000].
    #[arg(long)]
    paths: Option<usize>,
    /// Euler steps per unit time [default: 200].
    #[arg(long)]
    steps_per_unit: Option<usize>,
    /// Regularization of the two-factor model [default: 1e-5].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Realized-variance histogram `lo:hi:bins` [default: 4:8:80].
    #[arg(long)]
    hist: Option<String>,
    /// Also write per-path records (needs --out-dir).
    #[arg(long)]
    records: bool,
    /// Random seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[command(flatten)]
    common: Common,
    /// Corridor preset (`paper_corridor`, `none`) or TOML file [default: paper_corridor].
    #[arg(long)]
    corridor: Option<String>,
    /// Time points per unit [default: 1000].
    #[arg(long)]
    t_resolution: Option<usize>,
    /// Log-price points per unit [default: 1000].
    #[arg(long)]
    x_resolution: Option<usize>,
}

#[derive(Debug, Args)]
struct DlocArgs {
    #[command(flatten)]
    common: Common,
    /// Observation time [default: 1.5].
    #[arg(long = "t")]
    time: Option<f64>,
    /// Regularization [default: 1e-4].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Mixing-model draws [default: 1000000].
    #[arg(long)]
    samples: Option<usize>,
    /// Log-price bins `lo:hi:count` [default: automatic].
    #[arg(long, allow_hyphen_values = true)]
    x_bins: Option<String>,
    /// Variance-state bins `lo:hi:count` [default: automatic].
    #[arg(long, allow_hyphen_values = true)]
    a_bins: Option<String>,
    /// Random seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// TOML file with default values for the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// List the criteria without running them.
    #[arg(long)]
    list: bool,
    /// Scale every sample size to this many paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Random seed [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Run only these criteria (repeatable).
    #[arg(long = "only")]
    only: Vec<u8>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or inputs: exit 2.
    Usage(String),
    /// A check ran and failed: exit 1.
    Failed(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<varbound::Error> for CliError {
    fn from(e: varbound::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Surface(a) => commands::surface(a),
        Command::Price(a) => commands::price(a),
        Command::Bound(a) => commands::bound(a),
        Command::DlocCheck(a) => commands::dloc_check(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("varbound: {e}");
            ExitCode::from(e.code())
        }
    }
}
