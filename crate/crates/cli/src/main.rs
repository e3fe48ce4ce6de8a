use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qtm_cli::commands::{run_diagnose, run_oracle, run_solve, run_sweep, Outcome};
use qtm_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "qtm", version, about = "Quadratic Transfers Mechanism experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the symmetric equilibrium and write result.json.
    Solve(Common),
    /// Diagnose a stored result and write report.json and report.csv.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Result to diagnose; defaults to <output_dir>/result.json.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Solve and diagnose every (n, c) cell and write sweep.csv and sweep.json.
    Sweep(Common),
    /// Compare the solver with the brute-force oracle and write oracle.json.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Treat violated distributional assumptions as fatal.
    #[arg(long)]
    strict: bool,
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    if let Some(workers) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()?;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Solve(common) => run_solve(&load(&common)?, common.strict),
        Command::Diagnose { common, result } => {
            run_diagnose(&load(&common)?, result.as_deref(), common.strict)
        }
        Command::Sweep(common) => run_sweep(&load(&common)?, common.strict),
        Command::Oracle(common) => run_oracle(&load(&common)?, common.strict),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            if let Outcome::StrictViolation(found) = &outcome {
                for w in found {
                    eprintln!("assumption violated: {w}");
                }
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
