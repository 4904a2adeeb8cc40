//! Command-line driver: solve value fields, generate episode suites, run
//! the benchmark cross product, aggregate metrics, and render SVGs.
//!
//! Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
//! 4 I/O error. `DUALGUARD_THREADS` overrides the rayon pool size.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use pipeline::CliError;

#[derive(Parser)]
#[command(name = "dualguard", version, about = "Safety-filtered sampling MPC benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the safety value function and write the value-field file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output path; defaults to <output_dir>/value_field.hjvf.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the episode suite (requires the solved value field).
    Episodes {
        #[arg(long)]
        config: PathBuf,
        /// Output path; defaults to <output_dir>/episodes.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the (method x K x episode) benchmark, resuming from the
    /// journal when present.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of the configured methods.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated subset of the configured sample counts.
        #[arg(long = "K")]
        samples: Option<String>,
    },
    /// Aggregate a results CSV into per-K metric tables (text + JSON).
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; defaults to <output_dir>/results.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render the scene, an optional unsafe-set heading slice, and
    /// trajectory files to SVG.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory JSON files written by `run`.
        trajectories: Vec<PathBuf>,
        /// Draw the unsafe-set contour at this heading (degrees).
        #[arg(long)]
        heading_deg: Option<f64>,
        /// Output path; defaults to <output_dir>/render.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DUALGUARD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| CliError::Validation(format!("DUALGUARD_THREADS '{raw}' is not a thread count")))?;
    if threads == 0 {
        return Err(CliError::Validation(
            "DUALGUARD_THREADS must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve { config, out } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_solve(&config, out)
        }
        Command::Episodes { config, out } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_episodes(&config, out)
        }
        Command::Run {
            config,
            methods,
            samples,
        } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_run(&config, &methods, &samples)
        }
        Command::Report { config, csv } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_report(&config, csv)
        }
        Command::Render {
            config,
            trajectories,
            heading_deg,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_render(&config, &trajectories, heading_deg, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
