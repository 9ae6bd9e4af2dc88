use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Volume-filling cross-diffusion solver and entropy diagnostics.
#[derive(Parser)]
#[command(name = "volfill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write diagnostics.csv, snapshots and a summary.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scenario matching a glob pattern and tabulate decay rates.
    Sweep {
        pattern: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Validate a scenario and print the hypothesis report.
    Check { scenario: PathBuf },
    /// Fit exponential and algebraic decay laws to a diagnostics.csv file.
    Fit {
        csv: PathBuf,
        /// Fit window as `a,b`; defaults to the last half of the resolved run.
        #[arg(long, value_parser = commands::parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Run the independent verification checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { commands::Exit::Validation.into() } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run { scenario, out } => commands::run(&scenario, out.as_deref()),
        Command::Sweep { pattern, out, jobs } => commands::sweep(&pattern, &out, jobs),
        Command::Check { scenario } => commands::check(&scenario),
        Command::Fit { csv, window } => commands::fit(&csv, window),
        Command::Verify { seed } => commands::verify(seed),
    };
    match outcome {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::Exit::Validation.into()
        }
    }
}
