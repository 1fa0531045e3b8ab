//! `mscp`: run conformal coverage experiments from JSON configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mscp_core::harness::{emit_csv, emit_svg, run_experiment, run_validate, ExperimentConfig, Task};
use mscp_core::{Execution, MscpError};

#[derive(Parser)]
#[command(name = "mscp", version, about = "Weighted conformal prediction under multi-source covariate shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One-source coverage study over a grid of shifts and calibration sizes.
    Figure1(RunArgs),
    /// Multi-source regression method comparison.
    Regression(RunArgs),
    /// Multi-source latent-space classification comparison.
    Classification(RunArgs),
    /// Run the invariant self-checks.
    Validate,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// CSV output; overrides `out_csv` from the config.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// SVG output; overrides `out_svg` from the config.
    #[arg(long)]
    out_svg: Option<PathBuf>,
    /// Run replications on one thread.
    #[arg(long)]
    sequential: bool,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn run(task: Task, args: RunArgs) -> Result<(), MscpError> {
    let config = ExperimentConfig::from_path(&args.config)?;
    if config.task != task {
        return Err(MscpError::Config(format!("config is for task {}, not {task}", config.task)));
    }
    let out_csv = args
        .out_csv
        .or_else(|| config.out_csv.as_ref().map(PathBuf::from))
        .ok_or_else(|| MscpError::Config("no CSV output path; pass --out-csv or set out_csv".into()))?;
    let out_svg = args.out_svg.or_else(|| config.out_svg.as_ref().map(PathBuf::from));
    let execution = if args.sequential { Execution::Sequential } else { Execution::default() };

    let report = run_experiment(&config, execution)?;
    emit_csv(&report, &out_csv)?;
    if let Some(path) = out_svg {
        emit_svg(&report, &path)?;
    }
    for row in &report.rows {
        println!(
            "{:<32} {:<14} MCP {:.3}  PFI {:.3}  {} {:.3}",
            row.method.to_string(),
            row.grid_key,
            row.mcp,
            row.pfi,
            if task == Task::Classification { "size" } else { "MedL" },
            row.medl_or_size
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Figure1(a) => run(Task::Figure1, a),
        Command::Regression(a) => run(Task::Regression, a),
        Command::Classification(a) => run(Task::Classification, a),
        Command::Validate => {
            let suites = run_validate();
            for s in &suites {
                println!("{s}");
            }
            return if suites.iter().all(|s| s.passed()) { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ MscpError::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
