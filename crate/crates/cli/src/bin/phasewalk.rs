use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasewalk_cli::{cmd_ablation, cmd_sweep, cmd_walk, Outcome, RunOptions};

#[derive(Parser)]
#[command(name = "phasewalk", version, about = "Phase-based NMPC walking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and log every control tick.
    Walk(CommonArgs),
    /// Search the maximum recoverable impulse over a direction or timing grid.
    Sweep(CommonArgs),
    /// Run all four controller variants on the same push.
    Ablation(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file.
    config: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; PHASEWALK_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            plot: self.plot,
            out_dir: self.out.clone(),
            threads: self.threads,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Walk(a) => cmd_walk(&a.config, &a.options()),
        Command::Sweep(a) => cmd_sweep(&a.config, &a.options()).map(|_| Outcome::Success),
        Command::Ablation(a) => cmd_ablation(&a.config, &a.options()).map(|_| Outcome::Success),
    };
    match result {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("phasewalk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
