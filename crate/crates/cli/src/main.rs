//! `coag`: batch front end for the truncated coagulation solver.
//!
//! Exit codes: 0 success, 2 a bound/certificate/agreement check failed
//! (outputs are still written), 1 invalid input or runtime failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Status;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "coag", version, about = "Coagulation solver with bound diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one truncated problem and check the a-priori bounds.
    Solve(CommonArgs),
    /// Compare solutions across cut-off levels.
    Converge(CommonArgs),
    /// Compare the deterministic solver with a particle ensemble.
    Oracle(CommonArgs),
    /// Sample the kernel against its (kappa, lambda, sigma) certificate.
    VerifyKernel(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the oracle master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles and convergence studies.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> CliResult<Status> {
    let (args, which) = match &cli.command {
        Command::Solve(a) => (a, "solve"),
        Command::Converge(a) => (a, "converge"),
        Command::Oracle(a) => (a, "oracle"),
        Command::VerifyKernel(a) => (a, "verify-kernel"),
    };
    let mut cfg = config::load_config(&args.config)?;
    if let (Some(seed), Some(o)) = (args.seed, cfg.oracle.as_mut()) {
        o.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::invalid("--jobs", "must be >= 1"));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::invalid("--jobs", e.to_string()))?;
    pool.install(|| match which {
        "solve" => commands::cmd_solve(&cfg, &args.out),
        "converge" => commands::cmd_converge(&cfg, &args.out),
        "oracle" => commands::cmd_oracle(&cfg, &args.out),
        _ => commands::cmd_verify_kernel(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
