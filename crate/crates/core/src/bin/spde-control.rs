use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_control::commands::{self, Command, RunOptions};

#[derive(Parser)]
#[command(version, about = "Path-integral control of stochastic heat and Nagumo equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample uncontrolled trajectories
    Simulate(Flags),
    /// Open-loop trajectory optimization
    Optimize(Flags),
    /// Receding-horizon control of a noisy plant
    Mpc(Flags),
    /// Monte-Carlo checks of the change-of-measure identities
    Verify(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// TOML config file or preset name (heat_tracking, nagumo_accelerate, nagumo_suppress)
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (cmd, f) = match cli.command {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Optimize(f) => (Command::Optimize, f),
        Cmd::Mpc(f) => (Command::Mpc, f),
        Cmd::Verify(f) => (Command::Verify, f),
    };
    let opts = RunOptions {
        config: f.config,
        seed: f.seed,
        threads: f.threads,
        out_dir: f.out_dir,
    };
    match commands::run(cmd, &opts) {
        Ok(outcome) => {
            eprintln!("wrote {} files to {}", outcome.outputs.len(), outcome.out_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
