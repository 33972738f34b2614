//! `maesil` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Usage or configuration problem; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "maesil", version, about = "Superpatch masked autoencoder for CT volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// paper-stages, paper-total-75 or tiny-test.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Window, fit and cache volumes as raw f32 plus a JSON sidecar.
    Ingest(commands::IngestArgs),
    /// Empirical masking frequencies over a range of seeds.
    MaskStats(commands::MaskStatsArgs),
    /// Train a model on cached volumes.
    Train(commands::TrainArgs),
    /// Mask and reconstruct one volume.
    Reconstruct(commands::ReconstructArgs),
    /// Score reconstructions with PSNR, SSIM and masked PSNR.
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::MaskStats(a) => commands::mask_stats(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
