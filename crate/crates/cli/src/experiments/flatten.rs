//! flatten-verify: flattening map diagnostics and fidelity before/after.

use oneshot_core::flattening::{build_flattening_capped, FlatteningMap};
use oneshot_core::linalg::{fidelity, kron, trace_distance, CMatrix, DensityOperator, TensorLayout};
use oneshot_core::mc::{trial_rng, TrialExecutor};
use oneshot_core::random::{random_density, random_state_on};
use rand::Rng;
use serde_json::json;

use super::{instance_rng, max_of, tabulate};
use crate::config::{ExperimentConfig, InstanceSpec, PairsOpt};
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Cap on the flattening denominator `F`.
pub const DENOMINATOR_CAP: u64 = 4096;

const QUANTITIES: [&str; 5] =
    ["fidelity_before", "fidelity_after", "fidelity_drift", "trace_distance_before", "trace_distance_after"];

fn pair_row(map: &FlatteningMap, a: &DensityOperator, b: &DensityOperator) -> oneshot_core::Result<Vec<f64>> {
    let f0 = fidelity(a, b)?;
    let (fa, fb) = (map.apply(a)?, map.apply(b)?);
    let f1 = fa.fidelity(&fb)?;
    Ok(vec![f0, f1, (f1 - f0).abs(), trace_distance(a, b)?, fa.trace_distance(&fb)?])
}

/// Random subnormalized state on `A (x) B`, optionally pinched to be
/// block-diagonal in the eigenbasis of `sigma` on `A`.
fn random_input<R: Rng + ?Sized>(layout: &TensorLayout, basis: Option<&CMatrix>, rng: &mut R) -> oneshot_core::Result<DensityOperator> {
    let w = random_state_on(layout, layout.side(), rng);
    let scale = 0.5 + 0.5 * rng.random::<f64>();
    let m = match basis {
        None => w.matrix().clone(),
        Some(v) => {
            let (da, db) = (layout.dims()[0], layout.dims()[1]);
            let mut acc = CMatrix::zeros(da * db, da * db);
            for a in 0..da {
                let col = v.column(a).into_owned();
                let p = kron(&(&col * col.adjoint()), &oneshot_core::linalg::identity(db));
                acc += &p * w.matrix() * &p;
            }
            acc
        }
    };
    DensityOperator::from_matrix(m.scale(scale), layout.clone())
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&[])?;
    let delta = cfg.delta.unwrap_or(0.1);
    if !(delta > 0.0) {
        return Err(CliError::Config("delta must be positive".into()));
    }
    let mut out = Outcome::default();
    let (sigma, layout, inline_pair) = match &cfg.instance {
        Some(InstanceSpec::Inline(spec)) => {
            if spec.dims.len() != 2 {
                return Err(CliError::Config("flatten-verify expects dims [dA, dB]".into()));
            }
            let a = TensorLayout::single("A", spec.dims[0])?;
            let ab = TensorLayout::new(&[("A", spec.dims[0]), ("B", spec.dims[1])])?;
            let pair = (spec.state(1, &ab)?, spec.state(2, &ab)?);
            (spec.state(0, &a)?, ab, Some(pair))
        }
        _ => {
            let r = cfg.random_instance(&[4, 2])?;
            let mut rng = instance_rng(r.seed);
            let d = r.dims[0];
            let sigma = random_density(d, r.rank.unwrap_or(d).min(d), &mut rng);
            (sigma, TensorLayout::new(&[("A", d), ("B", r.dims[1])])?, None)
        }
    };
    let map = build_flattening_capped(&sigma, delta, DENOMINATOR_CAP)?;

    // map-level checks
    let f = map.denominator() as f64;
    let achieved = map.delta();
    let spec = map.flattened_spectrum();
    let top = spec.iter().map(|s| s.0).fold(0.0, f64::max);
    let bottom = spec.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let support = map.support_dim() as f64;
    let tr = sigma.trace();
    out.bound(BoundCheck::le("flat_spectrum_upper", top, 1.0 / f + 1e-12, true));
    out.bound(BoundCheck::le("flat_spectrum_lower", 1.0 / ((1.0 + achieved) * f), bottom + 1e-12, true));
    out.bound(BoundCheck::le("kraus_completeness_residual", map.kraus_completeness_residual(), 1e-12, true));
    out.bound(BoundCheck::le("support_dim_lower", tr * f, support * (1.0 + 1e-12), true));
    out.bound(BoundCheck::le("support_dim_upper", support, (1.0 + achieved) * tr * f * (1.0 + 1e-12), true));
    out.detail(
        "flattening",
        json!({
            "denominator": map.denominator(),
            "register_dim": map.register_dim(),
            "support_dim": map.support_dim(),
            "multiplicities": map.multiplicities(),
            "requested_delta": num(map.requested_delta()),
            "achieved_delta": num(achieved),
            "denominator_cap": DENOMINATOR_CAP,
            "sigma_eigenvalues": super::reals(map.eigenvalues()),
        }),
    );

    let basis = sigma.eigh().vectors;
    let pinch = matches!(cfg.options.pairs, PairsOpt::SigmaDiagonal);
    let rows = match &inline_pair {
        Some((a, b)) => tabulate(&mut out, exec, 1, &QUANTITIES, &|_| pair_row(&map, a, b))?,
        None => {
            out.streams = cfg.trials as u64;
            tabulate(&mut out, exec, cfg.trials, &QUANTITIES, &|t| {
                let mut rng = trial_rng(cfg.seed, t);
                let b = if pinch { Some(&basis) } else { None };
                let x = random_input(&layout, b, &mut rng)?;
                let y = random_input(&layout, b, &mut rng)?;
                pair_row(&map, &x, &y)
            })?
        }
    };
    let nondecrease = rows.iter().map(|r| r[0] - r[1]).fold(f64::NEG_INFINITY, f64::max);
    let contraction = rows.iter().map(|r| r[4] - r[3]).fold(f64::NEG_INFINITY, f64::max);
    out.bound(BoundCheck::le("fidelity_preserved", max_of(&rows, 2), 1e-9, true));
    out.bound(BoundCheck::le("fidelity_nondecreasing", nondecrease, 1e-9, true));
    out.bound(BoundCheck::le("trace_distance_contracts", contraction, 1e-10, true));
    out.detail("pairs", json!(match (&inline_pair, pinch) {
        (Some(_), _) => "inline",
        (None, true) => "sigma-diagonal",
        (None, false) => "random",
    }));
    Ok(out)
}
