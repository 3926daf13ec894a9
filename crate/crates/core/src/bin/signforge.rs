use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use signforge::cli::{run, Command, RunConfig};

/// Physical-style adversarial perturbations against a toy single-shot detector.
#[derive(Parser, Debug)]
#[command(name = "signforge", version)]
struct Args {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = RunConfig::load(&args.config, args.seed).and_then(|config| run(args.command, &config, &args.out));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("signforge {}: {e}", args.command.name());
            ExitCode::FAILURE
        }
    }
}
