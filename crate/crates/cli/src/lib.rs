//! Scenario runner for the gclab experiments.
//!
//! Exit codes: 0 when every configured verdict passes, 1 on a failed
//! verdict, 2 on schema or configuration errors, 3 on numerical or I/O
//! failures.

pub mod config;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(gclab::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<gclab::Error> for CliError {
    fn from(e: gclab::Error) -> Self {
        match e {
            gclab::Error::Config(_) | gclab::Error::DimensionOverflow { .. } => CliError::Schema(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Lagrange parameters matching the targets or micro-canonical means.
    SolveLambda,
    /// Grand-canonical chemical equilibrium.
    Equilibrium,
    /// Reduced micro-canonical state against the region's Gibbs state.
    Statement1a,
    /// Reduced states of Haar-random micro-canonical states.
    Typicality,
    /// Conditional wave functions for Haar bath bases.
    Statement3,
    /// Conditional wave functions for sector-respecting bath bases.
    Statement4,
    /// Equilibration in time and conditional wave functions of `Ψ_t`.
    Dynamics,
    /// GAP samples of a density matrix.
    GapSample,
    /// Appendix identity checks.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveLambda => "solve-lambda",
            Command::Equilibrium => "equilibrium",
            Command::Statement1a => "statement1a",
            Command::Typicality => "typicality",
            Command::Statement3 => "statement3",
            Command::Statement4 => "statement4",
            Command::Dynamics => "dynamics",
            Command::GapSample => "gap-sample",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gclab", version, about = "Ensemble-equivalence and typicality experiments on small lattice models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file; `verify` and `gap-sample` run without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` with a dotted key, applied before validation.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Parsed and resolved scenario of an invocation.
pub fn resolve(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => format!("schema_version = {}\n", config::SCHEMA_VERSION),
    };
    let mut cfg = config::load(&text, &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Run one invocation and write its artifacts; returns the verdict.
pub fn run(cli: &Cli) -> Result<bool, CliError> {
    if cli.threads == 0 {
        return Err(CliError::Schema("--threads must be at least 1".into()));
    }
    let cfg = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run::execute(cli.command, &cfg))?;
    let doc = report::assemble(cli.command.name(), &cfg, outcome.verdict, outcome.result)?;
    report::emit_report(&doc, &cli.out)?;
    if cfg.output.series {
        if let Some(t) = &outcome.series {
            report::emit_table(t, &cli.out.join("series.csv"))?;
        }
    }
    if let Some(t) = &outcome.samples {
        report::emit_table(t, &cli.out.join("samples.csv"))?;
    }
    Ok(outcome.verdict)
}

/// Exit code of an invocation, with errors reported on stderr.
pub fn main_with(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("gclab: verdict failed; see {}", cli.out.join("report.json").display());
            1
        }
        Err(e) => {
            eprintln!("gclab: {e}");
            e.exit_code()
        }
    }
}
