//! Command-line front end: reads a TOML run configuration, drives the solver,
//! stability scan, Siegel battery, verification suites or the 1D oracle, and
//! writes JSON reports (plus `fields.csv` for `solve`) to the output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use env_logger::Env;
use toric_hcsck::solver::SolveOptions;

use crate::commands::EXIT_CONFIG;
use crate::config::RunConfig;

const AFTER_HELP: &str = "\
Exit codes: 0 success, 1 configuration error, 2 not solvable / domain exceeded / failed checks, 3 Futaki obstruction.

fields.csv columns (written by `solve` on a grid of interior points):
  x, y                    grid point (y = 0 on an interval)
  u                       symplectic potential u = u_G + v
  det_g                   det of the Hessian G of u
  scalar_curvature_proxy  -(G^{-1})^{ab}_{,ab} by finite differences
  lambda_max              largest eigenvalue of N = M*M, M = G^{-1/2} H G^{-1/2}
  min_eig_t               smallest eigenvalue of the tensor T

Logging is controlled by TORIC_HCSCK_LOG (error, info or debug).";

#[derive(Parser, Debug)]
#[command(name = "toric-hcsck", version, about = "Deformed Abreu equation on Delzant polytopes", after_help = AFTER_HELP)]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random probes and trials (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Basis degree (overrides discretization.degree; quadrature order follows unless set).
    #[arg(long, global = true)]
    degree: Option<usize>,
    /// Uniform continuation schedule with N steps (overrides solver.t_schedule).
    #[arg(long = "t-steps", global = true)]
    t_steps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the equation by continuation; writes solve_report.json and fields.csv.
    Solve,
    /// Run the self-check suites; writes verify_report.json.
    Verify,
    /// Scan crease probes for the stability constant; writes stability_report.json.
    Stability,
    /// Run the Siegel-space invariant battery; writes siegel_report.json.
    Siegel,
    /// Evaluate the one-dimensional oracle and cross-check a Galerkin solve; writes oracle1d_report.json.
    Oracle1d,
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            RunConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(degree) = cli.degree {
        config.discretization.degree = degree;
    }
    if let Some(n) = cli.t_steps {
        config.solver.t_schedule = SolveOptions::uniform_schedule(n);
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::new().filter_or("TORIC_HCSCK_LOG", "error")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let result = match cli.command {
        Command::Solve => commands::cmd_solve(&config),
        Command::Verify => commands::cmd_verify(&config),
        Command::Stability => commands::cmd_stability(&config),
        Command::Siegel => commands::cmd_siegel(&config),
        Command::Oracle1d => commands::cmd_oracle1d(&config),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_FAILED as u8)
        }
    }
}
