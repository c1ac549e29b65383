//! One runner per experiment kind.

pub mod cmg;
pub mod convex_split;
pub mod covering;
pub mod decouple;
pub mod divergence;
pub mod flatten;
pub mod twirl;

use oneshot_core::mc::{column_estimate, trial_rng, TrialExecutor};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{num, Outcome};
use crate::CliError;

/// Dispatch on the experiment kind.
pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    match cfg.experiment {
        ExperimentKind::FlattenVerify => flatten::run(cfg, exec),
        ExperimentKind::Divergence => divergence::run(cfg, exec),
        ExperimentKind::ConvexSplit => convex_split::run(cfg, exec),
        ExperimentKind::Covering => covering::run(cfg, exec),
        ExperimentKind::Cmg => cmg::run(cfg, exec, false),
        ExperimentKind::WiretapPrivacy => cmg::run(cfg, exec, true),
        ExperimentKind::Decouple => decouple::run(cfg, exec),
        ExperimentKind::TwirlCheck => twirl::run(cfg, exec),
    }
}

/// Generator for a fixed instance: the last stream of the instance seed, so
/// it never coincides with a trial stream.
fn instance_rng(seed: u64) -> ChaCha8Rng {
    trial_rng(seed, u64::MAX)
}

/// Run per-trial rows and register each column as a named quantity.
fn tabulate(
    out: &mut Outcome,
    exec: &dyn TrialExecutor,
    trials: usize,
    names: &[&str],
    f: &oneshot_core::mc::TrialFn<'_>,
) -> Result<Vec<Vec<f64>>, CliError> {
    let rows = exec.run(trials, f)?;
    for (k, name) in names.iter().enumerate() {
        out.quantity(name, column_estimate(&rows, k));
    }
    Ok(rows)
}

fn max_of(rows: &[Vec<f64>], k: usize) -> f64 {
    rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max)
}

fn reals(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}
