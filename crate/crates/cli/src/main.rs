//! `ia-dof-lab`: Monte Carlo verification of linear IA schemes, DoF sweeps,
//! rank-ratio audits and rate curves.
//!
//! Exit codes: 0 success, 1 a trial or check failed, 2 usage error.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ia_dof_core::Mode;

pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Worker cap for trial-parallel commands.
pub const THREADS_ENV: &str = "IA_DOF_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ia-dof-lab",
    version,
    about = "Linear interference alignment DoF laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design and verify schemes on random instances.
    Verify(VerifyArgs),
    /// Same as `verify`, on parallel subchannels (L >= 2, default 2).
    Parallel(VerifyArgs),
    /// Closed-form DoF curves over K for a list of M.
    Sweep(SweepArgs),
    /// Rank-ratio trials, tightness witnesses and falsification search.
    Rankratio(RankRatioArgs),
    /// Sum rate over an SNR sweep and the DoF slope estimate.
    Rates(RatesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Css,
    Acs,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Css => Mode::Css,
            ModeArg::Acs => Mode::Acs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long, value_enum, default_value = "css")]
    pub mode: ModeArg,
    /// Users per cell.
    #[arg(long = "K", default_value_t = 4)]
    pub k: usize,
    /// Antennas per node.
    #[arg(long = "M", default_value_t = 2)]
    pub m: usize,
    /// Parallel subchannels.
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Transmit power budget (linear).
    #[arg(long = "P", default_value_t = 1.0)]
    pub p: f64,
    /// Extension length override, for negative controls.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Reference sets drawn per design; the best-conditioned one is kept.
    #[arg(long, default_value_t = 1)]
    pub reference_draws: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated antenna counts.
    #[arg(long = "M", value_delimiter = ',', default_value = "2,3,4")]
    pub m: Vec<usize>,
    /// Largest K.
    #[arg(long = "K", default_value_t = 40)]
    pub k: usize,
    #[arg(long = "L", default_value_t = 1)]
    pub l: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RankRatioArgs {
    /// Restrict to one mode; both when absent.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated antenna counts.
    #[arg(long = "M", value_delimiter = ',', default_value = "1,2,3")]
    pub m: Vec<usize>,
    #[arg(long = "L", default_value_t = 1)]
    pub l: usize,
    /// Users available to each trial.
    #[arg(long = "K", default_value_t = 6)]
    pub k: usize,
    /// Repetitions per (M, R, T) grid cell.
    #[arg(long, default_value_t = 2)]
    pub trials: usize,
    /// Falsification probes per (mode, M).
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Witness log (JSON lines); the summary goes to stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RatesArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Comma-separated SNR points in dB.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,10,20,30,40,50,60",
        allow_negative_numbers = true
    )]
    pub snr: Vec<f64>,
    /// Slope window `lo,hi` in dB.
    #[arg(long, value_delimiter = ',', default_value = "50,60")]
    pub window: Vec<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(args) => commands::verify(args, false),
        Command::Parallel(args) => commands::verify(args, true),
        Command::Sweep(args) => commands::sweep(args),
        Command::Rankratio(args) => commands::rankratio(args),
        Command::Rates(args) => commands::rates(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
