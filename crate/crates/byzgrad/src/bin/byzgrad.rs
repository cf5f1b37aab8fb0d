//! `byzgrad` — Byzantine-robust distributed gradient descent experiments.

use byzgrad::cli;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "byzgrad",
    version,
    about = "Byzantine-robust distributed gradient descent toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (flat key = value lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output CSV path; overrides the config's `output` key.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` key.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train against simulated workers; write one metrics row per round.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Bound the worker pool used for in-process simulation.
        #[arg(long, value_name = "N")]
        parallel: Option<usize>,
    },
    /// Sweep aggregators over fault budgets; write final errors per cell.
    BenchAgg {
        #[command(flatten)]
        common: Common,
        /// Run up to N sweep cells concurrently.
        #[arg(long, value_name = "N")]
        parallel: Option<usize>,
    },
    /// Spectral-norm trial grids and the optional lower-bound event rate.
    ConcLab {
        #[command(flatten)]
        common: Common,
        /// Run up to N trials concurrently.
        #[arg(long, value_name = "N")]
        parallel: Option<usize>,
    },
    /// Run the learner over TCP: accept workers, train, then send DONE.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Address to listen on, e.g. 127.0.0.1:7000.
        #[arg(long, value_name = "ADDR")]
        bind: String,
        /// Per-round report deadline in milliseconds.
        #[arg(long, value_name = "U32", default_value_t = 10_000)]
        timeout_ms: u32,
    },
    /// Join a learner as one worker and serve shard gradients until DONE.
    Worker {
        /// Experiment config file; must match the learner's.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Learner address to connect to.
        #[arg(long, value_name = "ADDR")]
        connect: String,
        /// Master seed; overrides the config's `seed` key.
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let parsed = Cli::parse();
    let result = match &parsed.command {
        Command::Simulate { common, parallel } => cli::cmd_simulate(
            &common.config,
            common.out.as_deref(),
            common.seed,
            *parallel,
        ),
        Command::BenchAgg { common, parallel } => cli::cmd_bench_agg(
            &common.config,
            common.out.as_deref(),
            common.seed,
            *parallel,
        ),
        Command::ConcLab { common, parallel } => cli::cmd_conc_lab(
            &common.config,
            common.out.as_deref(),
            common.seed,
            *parallel,
        ),
        Command::Serve {
            common,
            bind,
            timeout_ms,
        } => cli::cmd_serve(
            &common.config,
            bind,
            common.out.as_deref(),
            common.seed,
            u64::from(*timeout_ms),
        ),
        Command::Worker {
            config,
            connect,
            seed,
        } => cli::cmd_worker(config, connect, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(u8::try_from(error.exit_code()).unwrap_or(1))
        }
    }
}
