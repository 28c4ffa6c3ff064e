use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlmcmc_cli::{parse_config, parse_float_list, run, Experiment, Overrides};

/// Multilevel MCMC experiments on the hierarchical Gaussian model.
#[derive(Parser)]
#[command(name = "mlmcmc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the shared dataset and write data.csv.
    SimulateData(Common),
    /// Estimate variance and bias decay rates of the coupled increments.
    Rates(Common),
    /// Probe contraction and coupling decay of the kernels.
    CheckAssumptions(Common),
    /// Cost against MSE for the multilevel and single-level estimators.
    MseSweep(Common),
    /// One multilevel estimate at the configured epsilon.
    Estimate(Common),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args)]
struct Common {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated accuracy targets, e.g. 0.04,0.02,0.01.
    #[arg(long, value_parser = parse_float_list)]
    epsilon_grid: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Deepest level used by rates and check-assumptions.
    #[arg(long)]
    levels: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Reuse an existing data.csv instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::SimulateData(c) => (Experiment::SimulateData, c),
        Command::Rates(c) => (Experiment::Rates, c),
        Command::CheckAssumptions(c) => (Experiment::CheckAssumptions, c),
        Command::MseSweep(c) => (Experiment::MseSweep, c),
        Command::Estimate(c) => (Experiment::Estimate, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        epsilon_grid: common.epsilon_grid,
        replicates: common.replicates,
        levels: common.levels,
        out: common.out,
        threads: common.threads,
        data: common.data,
    };
    let result = parse_config(common.config.as_deref(), Some(experiment), overrides).and_then(|config| run(&config));
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
