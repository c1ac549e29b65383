//! Thread-pool trial executor.

use oneshot_core::mc::{TrialExecutor, TrialFn};
use rayon::prelude::*;

use crate::CliError;

/// Runs trials on a dedicated rayon pool. Results come back indexed by
/// trial, so the reduction order matches [`oneshot_core::mc::Sequential`].
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl TrialExecutor for RayonExecutor {
    fn run(&self, trials: usize, f: &TrialFn<'_>) -> oneshot_core::Result<Vec<Vec<f64>>> {
        self.pool.install(|| (0..trials as u64).into_par_iter().map(f).collect())
    }
}
