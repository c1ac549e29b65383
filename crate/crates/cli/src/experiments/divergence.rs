//! divergence: Renyi divergences, smoothing witnesses and the operator
//! inequalities they rely on, on random (or inline) pairs.

use oneshot_core::divergences::{
    projector_smooth, renyi_div, shaved_cs_check, smooth_renyi_div, smoothed_inf_norm_witness, truncate_toward,
    RenyiOrder, SmoothingParam,
};
use oneshot_core::linalg::{trace_distance, DensityOperator, TensorLayout};
use oneshot_core::mc::{trial_rng, TrialExecutor};
use oneshot_core::random::random_density;
use oneshot_core::states::gentle_residual;
use serde_json::json;

use super::{max_of, tabulate};
use crate::config::{ExperimentConfig, InstanceSpec};
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

const QUANTITIES: [&str; 12] = [
    "d2",
    "dinf",
    "smooth_dinf",
    "order_gap",
    "smoothing_gain",
    "smoothing_excess",
    "projector_commutator",
    "projector_capture_excess",
    "projector_norm_excess",
    "truncation_excess",
    "shaved_cs_excess",
    "gentle_excess",
];

/// All slack-type quantities are `lhs - rhs`; non-positive means the
/// inequality holds.
fn row(alpha: &DensityOperator, beta: &DensityOperator, eps: f64, rng: &mut rand_chacha::ChaCha8Rng) -> oneshot_core::Result<Vec<f64>> {
    let d = alpha.side();
    let layout = alpha.layout().clone();
    let beta = beta.relabel(layout.clone())?;
    let p = SmoothingParam::new(eps)?;
    let d2 = renyi_div(alpha, &beta, RenyiOrder::Two)?;
    let dinf = renyi_div(alpha, &beta, RenyiOrder::Infinity)?;
    let smooth = smooth_renyi_div(alpha, &beta, RenyiOrder::Infinity, p)?;
    let smoothing_excess = smooth.distance - eps * alpha.trace();
    let order_gap = if d2.is_finite() { d2 - dinf } else { 0.0 };
    let gain = if dinf.is_finite() { smooth.value - dinf } else { 0.0 };

    // projector smoothing against the state-smoothed witness
    let w = smoothed_inf_norm_witness(alpha, p)?;
    let ps = projector_smooth(alpha, &w, eps)?;
    let pi = &ps.projector;
    let comm = (pi.matrix() * alpha.matrix() - alpha.matrix() * pi.matrix()).norm();
    let capture = (1.0 - eps.sqrt()) * alpha.trace() - ps.captured;
    let squeezed = alpha.sandwich(pi.matrix())?;
    let norm_excess = squeezed.lambda_max() - (1.0 + 2.0 * eps.sqrt()) * w.lambda_max();

    // truncation toward a state within eps of alpha
    let lam = eps / 2.0;
    let near = DensityOperator::from_psd(alpha.scale(1.0 - lam)?.as_operator().add(beta.scale(lam)?.as_operator())?)?;
    let t = truncate_toward(alpha, &near, eps)?;
    let below = -alpha.sub(&t)?.lambda_min();
    let close = trace_distance(alpha, &t)? - eps.sqrt();
    let collision = t.trace_product(&t)? - (1.0 + 2.0 * eps.sqrt()) * alpha.trace_product(&near)?;
    let truncation = below.max(close).max(collision);

    // shaved Cauchy-Schwarz and gentle measurement with a random projector
    let rank = 1 + (rand::Rng::random_range(rng, 0..d));
    let proj = random_density(d, rank, rng).relabel(layout.clone())?.support_projector();
    let (lhs, rhs) = shaved_cs_check(alpha, &beta, &proj)?;
    let normalized = alpha.normalized()?;
    let res = gentle_residual(&normalized, &proj)?;
    let miss = (normalized.trace() - proj.trace_product(&normalized)?).max(0.0);
    let gentle = res - 2.0 * miss.sqrt();

    Ok(vec![
        d2,
        dinf,
        smooth.value,
        order_gap,
        gain,
        smoothing_excess,
        comm,
        capture,
        norm_excess,
        truncation,
        lhs - rhs,
        gentle,
    ])
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&[])?;
    let eps = cfg.epsilon_or(0.1);
    if !(eps > 0.0 && eps < 0.25) {
        return Err(CliError::Config("divergence needs 0 < epsilon < 1/4".into()));
    }
    let mut out = Outcome::default();
    out.streams = cfg.trials as u64;
    let inline = match &cfg.instance {
        Some(InstanceSpec::Inline(spec)) => {
            if spec.dims.len() != 1 {
                return Err(CliError::Config("divergence expects dims [d]".into()));
            }
            let l = TensorLayout::single("A", spec.dims[0])?;
            Some((spec.state(0, &l)?, spec.state(1, &l)?))
        }
        _ => None,
    };
    let (d, rank) = match inline {
        Some(_) => (0, 0),
        None => {
            let r = cfg.random_instance(&[4])?;
            (r.dims[0], r.rank.unwrap_or(r.dims[0]).min(r.dims[0]))
        }
    };
    let rows = tabulate(&mut out, exec, cfg.trials, &QUANTITIES, &|t| {
        let mut rng = trial_rng(cfg.seed, t);
        match &inline {
            Some((a, b)) => row(a, b, eps, &mut rng),
            None => {
                let a = random_density(d, d, &mut rng);
                let b = random_density(d, rank, &mut rng);
                row(&a, &b, eps, &mut rng)
            }
        }
    })?;
    let tol = 1e-9;
    out.bound(BoundCheck::le("d2_le_dinf", max_of(&rows, 3), tol, true));
    out.bound(BoundCheck::le("smoothing_lowers_dinf", max_of(&rows, 4), tol, true));
    out.bound(BoundCheck::le("smoothing_within_budget", max_of(&rows, 5), tol, true));
    out.bound(BoundCheck::le("projector_commutes", max_of(&rows, 6), tol, true));
    out.bound(BoundCheck::le("projector_captures_mass", max_of(&rows, 7), tol, true));
    out.bound(BoundCheck::le("projector_norm", max_of(&rows, 8), tol, true));
    out.bound(BoundCheck::le("truncation_guarantees", max_of(&rows, 9), tol, true));
    out.bound(BoundCheck::le("shaved_cauchy_schwarz", max_of(&rows, 10), tol, true));
    out.bound(BoundCheck::le("gentle_measurement", max_of(&rows, 11), tol, true));
    out.detail("epsilon", num(eps));
    out.detail("instance", json!(if inline.is_some() { "inline" } else { "random" }));
    Ok(out)
}
