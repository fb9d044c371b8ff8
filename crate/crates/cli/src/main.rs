//! `clockwork`: analyze MDPs, check learning-rate schedules, and run
//! Q-learning experiments.
//!
//! Exit codes: 0 success or verdict, 1 certified checks failed, 2 input
//! error, 3 component error, 4 admissibility gate.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;

#[derive(Debug, Parser)]
#[command(name = "clockwork", version, about = "Clock-based Q-learning analysis and verification")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Communication check, certificate and visit-rate bounds for an MDP file.
    Analyze { mdp: PathBuf },
    /// Solve for Q* and V*, written as qstar.csv and vstar.csv.
    Solve {
        mdp: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Series verdicts and admissibility of a config's schedule.
    ScheduleCheck { config: PathBuf },
    /// Run seeded Q-learning trajectories and write per-seed CSVs.
    Simulate {
        config: PathBuf,
        /// Refuse schedules outside the (t, N_t) admissible set.
        #[arg(long)]
        require_theorem2: bool,
    },
    /// Run the configured checks and write a report.
    Verify {
        config: PathBuf,
        /// Allow schedules and policies outside the certified set.
        #[arg(long)]
        exploratory: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let out = cli.out.as_deref();
    let result = match &cli.command {
        Command::Analyze { mdp } => commands::analyze(mdp, out),
        Command::Solve { mdp, tol } => commands::solve(mdp, *tol, out),
        Command::ScheduleCheck { config } => commands::schedule_check(config, out),
        Command::Simulate { config, require_theorem2 } => commands::simulate(config, *require_theorem2, out),
        Command::Verify { config, exploratory } => commands::verify(config, *exploratory, out),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
