use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kamgrid::harness::{run, RunOptions, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    SolveDiscounted,
    WeakKam,
    Mather,
    Simulate,
    Converge,
    Reference,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::SolveDiscounted => Subcommand::SolveDiscounted,
            Command::WeakKam => Subcommand::WeakKam,
            Command::Mather => Subcommand::Mather,
            Command::Simulate => Subcommand::Simulate,
            Command::Converge => Subcommand::Converge,
            Command::Reference => Subcommand::Reference,
        }
    }
}

/// Lattice solvers for discounted and ergodic control problems on the torus.
#[derive(Debug, Parser)]
#[command(name = "kamgrid", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML problem configuration.
    #[arg(long)]
    config: PathBuf,
    /// JSON output; tables go next to it with a .csv extension.
    #[arg(long)]
    out: PathBuf,
    /// Overrides simulation.seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let opts = RunOptions {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let code = run(cli.command.into(), &cli.config, &cli.out, &opts);
    ExitCode::from(code as u8)
}
