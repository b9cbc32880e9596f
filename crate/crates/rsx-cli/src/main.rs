//! Command-line front end for network synthesis, evaluation, and
//! verification.
//!
//! Exit codes are part of the interface: 0 all checks passed (or nothing to
//! check), 1 a non-advisory verification check failed, 2 invalid config or
//! input, 3 the requested accuracy budget is infeasible, 4 a weight file
//! failed its checksum.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use config::load_config;

#[derive(Parser)]
#[command(
    name = "rsx",
    version,
    about = "Synthesize, evaluate, and verify ReLU-sine-pow2 approximation networks",
    after_help = "Exit codes: 0 pass, 1 checks failed, 2 invalid config or input, \
                  3 infeasible budget, 4 checksum mismatch."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a network from a run config and write the weight file
    Synthesize {
        /// Run config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. --set budget.epsilon=0.25
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Directory for weights.json
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a weight file against the bound its config promises
    Verify {
        /// Run config (JSON); must be the one the file was synthesized from
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Weight file to verify
        weights: PathBuf,
        /// Directory for report.json and samples.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Seed for Monte Carlo sampling
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo sample count (lp mode)
        #[arg(long)]
        samples: Option<u64>,
        /// Grid points per axis (off-region and linf modes)
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Evaluate a weight file at points read from a file (one
    /// comma-separated point per line), one value per output line
    Eval {
        /// Weight file
        weights: PathBuf,
        /// Points file
        points: PathBuf,
        /// Evaluator path: exact or float
        #[arg(long, default_value = "exact")]
        path: String,
    },
    /// Write a per-sample error CSV for plotting
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Weight file
        weights: PathBuf,
        /// Directory for samples.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Grid points per axis
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn exit_code(e: &rsx::Error) -> i32 {
    match e {
        rsx::Error::Checksum(_) => 4,
        rsx::Error::Infeasible(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> rsx::Result<i32> {
    match cli.cmd {
        Cmd::Synthesize { config, set, out } => {
            let cfg = load_config(&config, &set)?;
            commands::cmd_synthesize(&cfg, &out)
        }
        Cmd::Verify { config, set, weights, out, seed, samples, grid } => {
            let cfg = load_config(&config, &set)?;
            commands::cmd_verify(&cfg, &weights, &out, seed, samples, grid)
        }
        Cmd::Eval { weights, points, path } => commands::cmd_eval(&weights, &points, &path),
        Cmd::Report { config, set, weights, out, grid } => {
            let cfg = load_config(&config, &set)?;
            commands::cmd_report(&cfg, &weights, &out, grid)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
