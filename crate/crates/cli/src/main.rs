//! `kamred`: build models, certify frequencies, run reductions and verify
//! them against direct propagation.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or manifest schema error,
//! 3 schedule did not converge, 4 frequency excluded, 5 missing or corrupted
//! artifact, 6 verification tolerance exceeded.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::failure::{classify, Failure, Kind};
use crate::manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "kamred",
    version,
    about = "KAM reduction of quasi-periodically forced linear systems"
)]
struct Cli {
    /// Run manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Root seed; overrides the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the manifest (default `runs/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rejection fractions over a γ grid and certificates for a given ω.
    Frequencies,
    /// Run the KAM schedule and write the reduced system.
    Reduce,
    /// Compare the reduced system with direct propagation.
    Verify,
    /// Tabulate the Floquet spectrum of a reduced run.
    Spectrum {
        /// `|k|_1` horizon; overrides the manifest.
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Build and inspect an oscillator model.
    Model,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::new(Kind::Usage, "--threads must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let path = cli
        .manifest
        .ok_or_else(|| Failure::new(Kind::Usage, "--manifest is required"))?;
    let manifest = RunManifest::load(&path)?;
    let ctx = Context::new(manifest, cli.seed, cli.out);
    match cli.command {
        Command::Frequencies => commands::frequencies(&ctx),
        Command::Reduce => commands::reduce(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Spectrum { kmax } => commands::spectrum(&ctx, kmax),
        Command::Model => commands::model(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err).exit_code() as u8)
        }
    }
}
