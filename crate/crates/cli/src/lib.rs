//! Config-driven experiment runner for `oneshot-core`.
//!
//! A run reads an [`config::ExperimentConfig`], evaluates the named
//! experiment on a rayon pool and produces a [`report::Report`]. Trials are
//! reduced in index order, so the numbers do not depend on the thread count.

pub mod config;
pub mod exec;
pub mod experiments;
pub mod report;

use std::time::Instant;

use config::ExperimentConfig;
use exec::RayonExecutor;
use report::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] oneshot_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Run one experiment on `threads` worker threads.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<Report, CliError> {
    let exec = RayonExecutor::new(threads)?;
    let start = Instant::now();
    let outcome = experiments::run(cfg, &exec)?;
    Ok(Report { config: cfg.clone(), outcome, wall_time_s: start.elapsed().as_secs_f64(), threads: exec.threads() })
}
