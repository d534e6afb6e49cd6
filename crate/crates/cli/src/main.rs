//! `kwnr`: kernel-weighted pseudoweights with nonresponse adjustment.

mod config;
mod estimate;
mod output;
mod simulate;
mod weight;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kwnr", version, about = "Kernel-weighted pseudoweights, nonresponse adjustment and Taylor variance")]
struct Cli {
    /// Increase diagnostic output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study; writes table1.csv, table2.csv and metrics.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for replicates.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, env = "KWNR_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// KW and kwNR weights for a cohort given a reference sample.
    Weight {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "KWNR_OUT_DIR")]
        out: PathBuf,
    },
    /// kwNR means with Taylor standard errors, overall and by subgroup.
    Estimate {
        #[arg(long)]
        cohort: PathBuf,
        /// File holding the KW weight column, row-aligned with the cohort.
        #[arg(long)]
        weights_from: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "KWNR_OUT_DIR")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbosity = cli.verbose;
    let result = match &cli.command {
        Command::Simulate {
            config,
            reps,
            seed,
            threads,
            out,
        } => simulate::run(simulate::SimulateArgs {
            config,
            reps: *reps,
            seed: *seed,
            threads: *threads,
            out,
            verbosity,
        }),
        Command::Weight {
            reference,
            cohort,
            config,
            out,
        } => weight::run(weight::WeightArgs {
            reference,
            cohort,
            config,
            out,
            verbosity,
        }),
        Command::Estimate {
            cohort,
            weights_from,
            config,
            out,
        } => estimate::run(estimate::EstimateArgs {
            cohort,
            weights_from: weights_from.as_deref(),
            config,
            out,
            verbosity,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
