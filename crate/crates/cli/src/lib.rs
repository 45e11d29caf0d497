//! Config-driven front end for `spm-core`. Each run writes a JSON summary, CSV curves and
//! certificate reports; the exit code is 0 on pass, 1 on check violations, 2 on config or
//! certification errors and 3 on solver failure.

pub mod artifacts;
pub mod config;
pub mod experiments;

pub use artifacts::{config_hash, write_artifacts, Curve, Report};
pub use config::{ExperimentConfig, SCHEMA_VERSION};

pub const TOOL: &str = "spm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
        }
    }
}

impl From<spm_core::Error> for CliError {
    fn from(e: spm_core::Error) -> Self {
        use spm_core::Error as E;
        match e {
            E::NonConvergence { .. } | E::Overflow { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// Runs the experiment on a pool of `jobs` threads (all cores if `None`).
///
/// Ensemble results are collected in input order, so the report does not depend on `jobs`.
pub fn run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Report, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| experiments::run(cfg))
}

/// Runs and writes artifacts into `out`; returns the exit code.
pub fn execute(cfg: &ExperimentConfig, out: &std::path::Path, jobs: Option<usize>) -> Result<(Report, i32), CliError> {
    let report = run(cfg, jobs)?;
    write_artifacts(cfg, &report, out)?;
    let code = if report.passed { EXIT_PASS } else { EXIT_VIOLATION };
    Ok((report, code))
}
