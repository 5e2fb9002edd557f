//! `incompat`: batch front end for the incompatibility quantifiers.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use incompat_core::Error;
use serde::Serialize;
use thiserror::Error;

use crate::commands::Ctx;
use crate::config::{RunConfig, ScenarioArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Input(String),
    #[error("{count} bound violation(s) beyond tolerance {tol:e}")]
    Violation { count: usize, tol: f64 },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation { .. } => 2,
            CliError::Core(Error::Solver { .. } | Error::Conic(_) | Error::NegativeValue { .. }) => 3,
            _ => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "bound_violation",
            3 => "solver_failure",
            _ => "input_error",
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

#[derive(Debug, Parser)]
#[command(name = "incompat", version, about = "Diamond-distance incompatibility quantifiers and bounds")]
struct Cli {
    /// Tolerance for every bound check; must not be below the solver gap tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for random scenarios, states and restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV and JSON outputs; stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Construct a MUB family and report T, η* and the unbiasedness error.
    Mub {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// Also write the assemblage JSON to this file.
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// I_◇ over an η grid, compared to the analytic value for MUBs.
    Incompat(ScenarioArgs),
    /// Gain from appending the last measurement, with ΔI ≤ I(N) ≤ I(G).
    Gain(ScenarioArgs),
    /// Subset bound and, for three settings, the splitting sandwich.
    Bounds {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Settings in C (default: all but the last).
        #[arg(long, value_delimiter = ',')]
        subset: Option<Vec<usize>>,
    },
    /// Genuine, pairwise and hollow parts of three measurements.
    Decompose(ScenarioArgs),
    /// Consistent steering distance of a shared state with Alice's measurements.
    Steering {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        state: commands::StateArgs,
    },
    /// Consistent trace distance of a behavior to the local set.
    Nonlocality {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        state: commands::StateArgs,
        /// Behavior JSON file; replaces state and measurements.
        #[arg(long)]
        behavior: Option<PathBuf>,
        /// Bob's settings, the first MUB bases of his dimension.
        #[arg(long, default_value_t = 2)]
        bob_m: usize,
    },
    /// Seesaw maximization of the averaged CHSH functional.
    Chsh {
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        /// Maximize a single CHSH expression instead.
        #[arg(long)]
        single_pair: bool,
    },
    /// Parallel analytic-vs-SDP sweep over dimensions and setting counts.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        eta_start: f64,
        #[arg(long, default_value_t = 1.0)]
        eta_stop: f64,
        #[arg(long, default_value_t = 11)]
        eta_steps: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx::new(&cli.tol, &cli.seed, &cli.out, &cfg)?;
    match cli.command {
        Command::Mub { d, m, write } => commands::mub(&ctx, d, m, write.as_deref()),
        Command::Incompat(s) => commands::incompat(&ctx, &s),
        Command::Gain(s) => commands::gain(&ctx, &s),
        Command::Bounds { scenario, subset } => commands::bounds(&ctx, &scenario, subset.or(cfg.subset.clone())),
        Command::Decompose(s) => commands::decompose(&ctx, &s),
        Command::Steering { scenario, state } => commands::steering(&ctx, &scenario, &state),
        Command::Nonlocality { scenario, state, behavior, bob_m } => {
            commands::nonlocality(&ctx, &scenario, &state, behavior.as_deref(), bob_m)
        }
        Command::Chsh { restarts, single_pair } => commands::chsh(&ctx, restarts, single_pair),
        Command::Sweep { dims, ms, eta_start, eta_stop, eta_steps } => {
            commands::sweep(&ctx, &dims, &ms, config::EtaGrid { start: eta_start, stop: eta_stop, steps: eta_steps })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport { error: e.kind(), message: e.to_string(), exit_code: e.exit_code() };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use incompat_core::SolverStatus;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Violation { count: 1, tol: 1e-7 }.exit_code(), 2);
        let solver = Error::Solver { what: "x".into(), status: SolverStatus::MaxIterations };
        assert_eq!(CliError::Core(solver).exit_code(), 3);
        assert_eq!(CliError::Core(Error::NegativeValue { value: -1.0 }).exit_code(), 3);
        assert_eq!(CliError::Core(Error::NotPrime(4)).exit_code(), 4);
        assert_eq!(CliError::Input("x".into()).kind(), "input_error");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
