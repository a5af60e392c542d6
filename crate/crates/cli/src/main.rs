//! `alpha-miner`: synthetic data, expression evaluation, seeding, task
//! banks, mining campaigns, fusion and archive reports.

mod commands;
mod error;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::*;

#[derive(Parser)]
#[command(name = "alpha-miner", version, about = "Formulaic alpha factor mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic OHLCV panel with planted factors.
    Synth(SynthArgs),
    /// Backtest one expression and print the report as JSON.
    Eval(EvalArgs),
    /// Build a seed pool from a seed file or a generator.
    Seed(SeedArgs),
    /// Cross a seed pool with time windows into a task bank.
    Tasks(TasksArgs),
    /// Run a mining campaign over a task bank.
    Mine(MineArgs),
    /// Select decorrelated archive members and fuse them.
    Fuse(FuseArgs),
    /// Summarize an archive as JSON and CSV.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Seed(a) => commands::seed(a),
        Command::Tasks(a) => commands::tasks(a),
        Command::Mine(a) => commands::mine(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
