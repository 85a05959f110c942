mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

/// Convolution-quadrature marching-on-in-time EFIE solver.
#[derive(Parser, Debug)]
#[command(name = "cqmot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// March a formulation in time; writes iters.csv, currents.csv and,
    /// with probe.point set, probe.csv.
    Solve(Args),
    /// Condition number of Z_0 over a dt or mesh sweep; writes condition.csv.
    SweepCond(Args),
    /// Polynomial eigenvalues of the marching recursion; writes eig.csv.
    Eig(Args),
    /// Samples the current of an earlier solve at probe.point; writes probe.csv.
    Probe(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Run configuration (key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CQMOT_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CQMOT_THREADS: cannot parse '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::SweepCond(a) => ("sweep-cond", a),
        Command::Eig(a) => ("eig", a),
        Command::Probe(a) => ("probe", a),
    };
    let cfg = RunConfig::from_file(&args.config)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    commands::write_manifest(&args.out, name, &cfg)?;
    match cli.command {
        Command::Solve(_) => commands::solve(&cfg, &args.out),
        Command::SweepCond(_) => commands::sweep_cond(&cfg, &args.out).map(|_| true),
        Command::Eig(_) => commands::eig(&cfg, &args.out).map(|_| true),
        Command::Probe(_) => commands::probe(&cfg, &args.out).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("solver did not converge at every step; partial outputs were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
