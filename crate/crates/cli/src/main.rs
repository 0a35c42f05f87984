//! `snode-dmd`: simulate benchmark data, train, evaluate and run the DMD
//! baseline.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CliError;

#[derive(Parser, Debug)]
#[command(name = "snode-dmd", version, about = "Stochastic neural-ODE DMD from sparse sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a benchmark dataset.
    Simulate(SimulateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Classical exact DMD on the observations.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// JSON file with default values for any flag (flags win).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// synthetic | grayscott | vorticity
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of snapshots.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long = "sensor-frac")]
    pub sensor_frac: Option<f64>,
    #[arg(long = "noise-sigma")]
    pub noise_sigma: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    /// Resume from a checkpoint directory.
    #[arg(long)]
    pub from: Option<std::path::PathBuf>,
    /// Also keep a checkpoint `epoch_NNNN` every N epochs.
    #[arg(long = "save-every")]
    pub save_every: Option<usize>,
    /// Positional-encoding frequency bands.
    #[arg(long = "posenc-bands")]
    pub posenc_bands: Option<usize>,
    /// Rollout window length.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub ckpt: Option<std::path::PathBuf>,
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    /// `1` (teacher forced) or `m` (autoregressive from the first frame).
    #[arg(long)]
    pub horizon: Option<String>,
    /// Comma-separated subset of l1,modes,eigs,portraits,traj.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Also write reconstructions on a WxH grid.
    #[arg(long = "grid-out")]
    pub grid_out: Option<String>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = config::thread_cap().and_then(|threads| match cli.command {
        Command::Simulate(a) => commands::simulate(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Baseline(a) => commands::baseline(a, threads),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
