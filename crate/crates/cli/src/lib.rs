//! Command-line experiments over the `mtm-core` kernels, oracles and bounds.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Experiment, ExperimentConfig, Plan};
pub use error::CliError;
pub use output::{Format, ResultRow};

#[derive(Debug, Parser)]
#[command(name = "mtm-lab", version, about = "Multiple-try Metropolis experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub fields: ExperimentConfig,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run chains of one kernel and report acceptance, means and gap proxies.
    Sample(Common),
    /// Importance-weight moments: displayed closed form, quadrature and Monte Carlo.
    Moments(Common),
    /// Analytic gap, acceptance and convergence bounds.
    Bounds(Common),
    /// Check the comparison inequalities on random finite chains.
    Oracle(Common),
    /// Gap proxies across dimensions for the ideal and MH chains.
    Scaling(Common),
    /// Conductance and acceptance of globally balanced MTM across try counts.
    GbDecay(Common),
    /// Matched-seed MTM and ideal chains across try counts.
    MtmVsIdeal(Common),
}

impl Command {
    pub fn split(&self) -> (Experiment, &Common) {
        match self {
            Command::Sample(c) => (Experiment::Sample, c),
            Command::Moments(c) => (Experiment::Moments, c),
            Command::Bounds(c) => (Experiment::Bounds, c),
            Command::Oracle(c) => (Experiment::Oracle, c),
            Command::Scaling(c) => (Experiment::Scaling, c),
            Command::GbDecay(c) => (Experiment::GbDecay, c),
            Command::MtmVsIdeal(c) => (Experiment::MtmVsIdeal, c),
        }
    }
}

/// Resolves the config, runs the experiment, writes the rows, and reports
/// inequality violations after the output is on disk.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (experiment, common) = cli.command.split();
    let file = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let merged = file.overridden_by(&common.fields);
    let plan = Plan::resolve(experiment, &merged)?;
    let format = merged.format.unwrap_or_default();
    let work = || -> Result<(), CliError> {
        let outcome = experiments::run(&plan)?;
        match &merged.out {
            Some(path) => output::emit(&outcome.rows, path, format)?,
            None => output::write_rows(&outcome.rows, format, std::io::stdout().lock())?,
        }
        if let Some(first) = outcome.violations.first() {
            return Err(CliError::Violation { count: outcome.violations.len(), first: first.clone() });
        }
        Ok(())
    };
    match common.threads {
        Some(0) => Err(CliError::config("threads", "must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::config("threads", e))?
            .install(work),
        None => work(),
    }
}
