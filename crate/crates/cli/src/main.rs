//! `route-choice`: value functions, estimation, prediction and simulation
//! for route choice models from a TOML run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use route_choice::Error;

use crate::config::{Model, Resolved};

#[derive(Parser)]
#[command(name = "route-choice", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Value function at every node for each destination.
    Values,
    /// Maximum likelihood estimation from an observation file.
    Estimate,
    /// Link flows and accessibility.
    Predict,
    /// Synthetic observations drawn from the model.
    Simulate,
    /// k-shortest-path choice sets.
    Choicesets,
    /// Link choice probabilities and path probabilities.
    Probabilities,
}

/// Flags that override keys of the configuration file.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    #[arg(long, global = true)]
    observations: Option<PathBuf>,
    /// Choice-set files (repeatable); replaces the configured list
    #[arg(long = "choice-set", global = true)]
    choice_sets: Vec<PathBuf>,
    #[arg(long, global = true)]
    model: Option<Model>,
    /// Comma-separated attribute names
    #[arg(long, global = true, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
    /// Comma-separated coefficients
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    origin: Option<String>,
    /// Comma-separated destination nodes
    #[arg(long, global = true, value_delimiter = ',')]
    destinations: Option<Vec<String>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Number of simulated observations
    #[arg(short = 'n', long, global = true)]
    n: Option<usize>,
    /// Total demand for prediction
    #[arg(long, global = true)]
    demand: Option<f64>,
    /// Paths per generated choice set
    #[arg(short = 'k', long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    /// Round reports to table precision
    #[arg(long, global = true)]
    rounded: bool,
}

fn resolve(o: &Overrides) -> Result<Resolved> {
    let (mut c, base) = config::load(o.config.as_deref())?;
    // Paths given on the command line are relative to the working directory;
    // anchoring them against `base` must not move them.
    let cwd = std::env::current_dir()?;
    let from_cli = |p: &PathBuf| if p.is_absolute() { p.clone() } else { cwd.join(p) };
    if let Some(p) = &o.network {
        c.network = Some(from_cli(p));
    }
    if let Some(p) = &o.observations {
        c.observations = Some(from_cli(p));
    }
    if !o.choice_sets.is_empty() {
        c.choice_sets = o.choice_sets.iter().map(from_cli).collect();
    }
    if let Some(p) = &o.output_dir {
        c.output_dir = Some(from_cli(p));
    }
    if let Some(m) = o.model {
        c.model = m;
    }
    if let Some(a) = &o.attributes {
        c.attributes = a.clone();
    }
    if let Some(b) = &o.beta {
        c.beta = b.clone();
    }
    if o.mu.is_some() {
        c.mu = o.mu;
    }
    if o.origin.is_some() {
        c.origin = o.origin.clone();
    }
    if let Some(d) = &o.destinations {
        c.destinations = d.clone();
    }
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(n) = o.n {
        c.simulate.n = n;
    }
    if let Some(d) = o.demand {
        c.predict.demand = d;
    }
    if let Some(k) = o.k {
        c.generate.k = k;
    }
    if let Some(t) = o.tolerance {
        c.solver.tolerance = t;
    }
    if let Some(m) = o.max_iterations {
        c.solver.max_iterations = m;
    }
    c.rounded |= o.rounded;
    let hash = config::hash(&c)?;
    Ok(Resolved { config: c, base, hash })
}

const NOT_CONVERGED: u8 = 2;
const INPUT_ERROR: u8 = 3;
const INFEASIBLE: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::InfeasibleValueFunction { .. }
            | Error::SingularSystem { .. }
            | Error::NonInvertibleHessian
            | Error::AllStepsInfeasible,
        ) => INFEASIBLE,
        Some(Error::NoConvergence { .. } | Error::EstimationDidNotConverge(_) | Error::MaxStepsExceeded { .. }) => {
            NOT_CONVERGED
        }
        _ => INPUT_ERROR,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = resolve(&cli.overrides).and_then(|run| match cli.command {
        Command::Values => commands::values(&run),
        Command::Estimate => commands::estimate(&run),
        Command::Predict => commands::predict(&run),
        Command::Simulate => commands::simulate(&run),
        Command::Choicesets => commands::choicesets(&run),
        Command::Probabilities => commands::probabilities(&run),
    });
    match outcome {
        Ok(outcome) => {
            for path in &outcome.written {
                println!("{}", path.display());
            }
            if outcome.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(NOT_CONVERGED)
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
