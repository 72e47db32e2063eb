use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use levydp_cli::{run_with_workers, CliError, Command, ExperimentConfig, Which};

#[derive(Parser)]
#[command(name = "levydp", version, about = "Simulate, value and verify controlled jump-diffusion problems")]
struct Args {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory; falls back to the config's `output`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample paths, untruncated and truncated side by side.
    Simulate,
    /// Value estimates over the configured start states and truncation levels.
    Value,
    /// Run property checks and write their reports.
    Verify {
        #[arg(value_enum)]
        which: Which,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(path) = args.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let cmd = match args.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Value => Command::Value,
        Cmd::Verify { which } => Command::Verify(which),
    };
    match run_with_workers(cmd, &cfg, &out, args.workers) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
