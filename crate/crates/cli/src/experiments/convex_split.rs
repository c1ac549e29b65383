//! convex-split: exact error on random classical-quantum instances.

use oneshot_core::covering::{convex_split_bound, convex_split_conditions, convex_split_error, ConvexSplitInstance};
use oneshot_core::linalg::{CMatrix, DensityOperator, TensorLayout};
use oneshot_core::mc::{trial_rng, TrialExecutor};
use oneshot_core::random::{random_density, random_probability};
use rand::Rng;
use serde_json::{json, Value};

use super::tabulate;
use crate::config::ExperimentConfig;
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Block-diagonal `rho^{XYM}` with random weights and conditionals, and the
/// diagonal marginals as `alpha`, `beta`.
pub fn random_cq_instance<R: Rng + ?Sized>(
    dims: [usize; 3],
    rank: usize,
    a: usize,
    b: usize,
    rng: &mut R,
) -> oneshot_core::Result<ConvexSplitInstance> {
    let [nx, ny, dm] = dims;
    let p = random_probability(nx * ny, rng);
    let layout = TensorLayout::new(&[("X", nx), ("Y", ny), ("M", dm)])?;
    let mut m = CMatrix::zeros(layout.side(), layout.side());
    let mut px = vec![0.0; nx];
    let mut py = vec![0.0; ny];
    for k in 0..nx * ny {
        let r = random_density(dm, rank, rng);
        m.view_mut((dm * k, dm * k), (dm, dm)).copy_from(&r.matrix().scale(p[k]));
        px[k / ny] += p[k];
        py[k % ny] += p[k];
    }
    let rho = DensityOperator::from_matrix(m, layout)?;
    let alpha = DensityOperator::diagonal(&px, TensorLayout::single("X", nx)?)?;
    let beta = DensityOperator::diagonal(&py, TensorLayout::single("Y", ny)?)?;
    ConvexSplitInstance::new(rho, alpha, beta, a, b)
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&["a", "b"])?;
    let (a, b) = (cfg.size("a", 16), cfg.size("b", 16));
    let eps = cfg.epsilon_or(0.01);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::Config("convex-split needs 0 < epsilon < 1".into()));
    }
    let r = cfg.random_instance(&[2, 2, 2])?;
    let dims = [r.dims[0], r.dims[1], r.dims[2]];
    let rank = r.rank.unwrap_or(dims[2]).min(dims[2]);
    let mut out = Outcome { streams: cfg.trials as u64, stream_seed: Some(r.seed), ..Outcome::default() };
    let names = ["error", "error_unit", "error_decrease", "compliant", "bound"];
    // instances come from the streams of the instance seed
    let rows = tabulate(&mut out, exec, cfg.trials, &names, &|t| {
        let mut rng = trial_rng(r.seed, t);
        let inst = random_cq_instance(dims, rank, a, b, &mut rng)?;
        let unit = ConvexSplitInstance { a: 1, b: 1, ..inst.clone() };
        let e = convex_split_error(&inst)?;
        let e1 = convex_split_error(&unit)?;
        let ok = convex_split_conditions(&inst, eps)?.iter().all(|c| c.pass);
        Ok(vec![e, e1, e1 - e, if ok { 1.0 } else { 0.0 }, convex_split_bound(eps, inst.rho.trace())])
    })?;
    // conditions of every instance, for auditing
    let mut audit = Vec::new();
    for t in 0..cfg.trials.min(64) as u64 {
        let mut rng = trial_rng(r.seed, t);
        let inst = random_cq_instance(dims, rank, a, b, &mut rng)?;
        let conds: Vec<Value> = convex_split_conditions(&inst, eps)?
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "lhs_bits": num(c.lhs_bits),
                    "divergence": num(c.divergence),
                    "threshold": num(c.threshold),
                    "pass": c.pass,
                })
            })
            .collect();
        audit.push(json!({"trial": t, "conditions": conds}));
    }
    let compliant: Vec<&Vec<f64>> = rows.iter().filter(|r| r[3] > 0.5).collect();
    let worst = compliant.iter().map(|r| r[0] - r[4]).fold(f64::NEG_INFINITY, f64::max);
    out.bound(BoundCheck::le("convex_split_bound", worst, 0.0, !compliant.is_empty()));
    let non_decreasing = rows.iter().filter(|r| r[2] <= 0.0).count() as f64;
    out.bound(BoundCheck::le("error_below_unit_size", non_decreasing, 0.0, false));
    out.detail("epsilon", num(eps));
    out.detail("sizes", json!({"a": a, "b": b}));
    out.detail("instance_seed", json!(r.seed));
    out.detail("compliant_instances", json!(compliant.len()));
    out.detail("conditions", Value::Array(audit));
    Ok(out)
}
