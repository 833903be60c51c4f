use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wps_core::analysis::AnalysisRoles;
use wps_core::bench::{self, BenchError};

/// Warehouse picking simulator.
#[derive(Debug, Parser)]
#[command(name = "wps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the Q-learning policy and export its checkpoint, learning curve and Q-surfaces.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every planned replicate against a checkpoint and write runs.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        qtable: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to all cores). Output does not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize a runs CSV into tables, histograms, fits and the comparison table.
    Analyze {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "vision-bench")]
        accuracy_system: String,
        #[arg(long, default_value = "proposed")]
        proposed: String,
        #[arg(long, default_value = "industry")]
        baseline: String,
        #[arg(long, default_value = "CNN")]
        classifier: String,
    },
    /// Render report.md from an analysis directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Train { config, out } => bench::cmd_train(&config, &out),
        Command::Simulate {
            config,
            qtable,
            out,
            workers,
        } => {
            if workers == Some(0) {
                return Err(BenchError::Validation("--workers must be at least 1".into()));
            }
            let output = bench::cmd_simulate(&config, &qtable, &out, workers)?;
            eprintln!("{} runs written", output.records.len());
            if !output.rejected.is_empty() {
                eprintln!("{} runs excluded:", output.rejected.len());
                for (id, reason) in &output.rejected {
                    eprintln!("  run {id}: {reason}");
                }
            }
            Ok(())
        }
        Command::Analyze {
            runs,
            out,
            accuracy_system,
            proposed,
            baseline,
            classifier,
        } => {
            let roles = AnalysisRoles {
                accuracy_system,
                proposed,
                baseline,
                classifier,
            };
            let analysis = bench::cmd_analyze(&runs, &out, &roles)?;
            let failed = analysis.comparison.iter().filter(|r| !r.pass).count();
            eprintln!(
                "{} comparison rows, {failed} outside tolerance",
                analysis.comparison.len()
            );
            Ok(())
        }
        Command::Report { input, out } => bench::cmd_report(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
