use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lagrange_net::harness::{self, ExperimentConfig, SweepParam};
use lagrange_net::Result;

/// Gradient check threshold on the worst relative error.
const GRADIENT_TOL: f64 = 1e-5;
const GRADIENT_SAMPLES: usize = 16;

#[derive(Parser)]
#[command(name = "lagrange-net", version, about = "Distributed Lagrangian solvers and certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver and write trace, summary and certificate files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the spectral certificate for the configured algorithm as JSON.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the centralized problem and print the reference solution as JSON.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment per grid value and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare supplied derivatives against finite differences.
    CheckGradients {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = GRADIENT_SAMPLES)]
        samples: usize,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (e.g. `| head`) is not an error for the run itself
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = harness::output_dir(&cfg, out);
            let result = harness::run_experiment(&cfg, &dir)?;
            print_json(&result.summary)?;
            Ok(result.exit_code())
        }
        Command::Certify { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let prepared = harness::prepare(&cfg)?;
            let cert = harness::certify(&cfg, &prepared)?;
            print_json(&cert)?;
            Ok(if cert.passed() { harness::EXIT_CONVERGED } else { harness::EXIT_NOT_CONVERGED })
        }
        Command::Oracle { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let prepared = harness::prepare(&cfg)?;
            print_json(&harness::oracle_report(&cfg, &prepared))?;
            Ok(harness::EXIT_CONVERGED)
        }
        Command::Sweep { config, param, grid, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let param: SweepParam = param.parse()?;
            let grid = harness::parse_grid(&grid)?;
            let dir = harness::output_dir(&cfg, out);
            let rows = harness::sweep(&cfg, param, &grid, &dir)?;
            print_json(&rows)?;
            Ok(harness::EXIT_CONVERGED)
        }
        Command::CheckGradients { config, samples } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = cfg.problem.check_gradients(samples, cfg.seed)?;
            print_json(&report)?;
            let worst = report.max_rel_error.max(report.max_hessian_rel_error.unwrap_or(0.0));
            Ok(if worst <= GRADIENT_TOL { harness::EXIT_CONVERGED } else { harness::EXIT_NOT_CONVERGED })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { harness::EXIT_USAGE } else { 0 };
            return ExitCode::from(code as u8);
        }
    };
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            harness::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

