//! twirl-check: Haar second moment against the closed-form coefficients.

use oneshot_core::decoupling::{random_flat_instance, twirl_moment_check, CPSuperoperator, DecouplingInstance, TiltedConstruction};
use oneshot_core::linalg::TensorLayout;
use oneshot_core::mc::TrialExecutor;
use oneshot_core::random::random_state_on;
use rand::Rng;
use serde_json::json;

use super::{instance_rng, reals};
use crate::config::ExperimentConfig;
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Random state on `A1 A2 R` with a random channel to `E`.
pub fn random_instance<R: Rng + ?Sized>(dims: [usize; 4], rank: usize, rng: &mut R) -> oneshot_core::Result<DecouplingInstance> {
    let [a1, a2, dr, de] = dims;
    let layout = TensorLayout::new(&[("A1", a1), ("A2", a2), ("R", dr)])?;
    let rho = random_state_on(&layout, rank, rng);
    let t = CPSuperoperator::random_channel(layout.select(&["A1", "A2"])?, TensorLayout::single("E", de)?, 2, rng)?;
    DecouplingInstance::new(rho, t)
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&[])?;
    let r = cfg.random_instance(&[2, 2, 2, 2])?;
    let dims = [r.dims[0], r.dims[1], r.dims[2], r.dims[3]];
    let full = dims[0] * dims[1] * dims[2];
    let rank = r.rank.unwrap_or(full).min(full);
    let mut rng = instance_rng(r.seed);
    let mut out = Outcome { streams: cfg.trials as u64, ..Outcome::default() };
    let (a, b) = if cfg.options.tilted {
        let eps = cfg.epsilon_or(0.01);
        if !(eps > 0.0 && eps < 0.25) {
            return Err(CliError::Config("the tilted pair needs 0 < epsilon < 1/4".into()));
        }
        out.detail("epsilon", num(eps));
        let inst = random_flat_instance([dims[0], dims[1]], dims[2], dims[3], rank, 2, &mut rng)?;
        TiltedConstruction::new(&inst, eps)?.instances(inst.channel.output())?
    } else {
        (random_instance(dims, rank, &mut rng)?, random_instance(dims, rank, &mut rng)?)
    };
    let check = twirl_moment_check(&a, &b, cfg.trials, cfg.seed, exec)?;
    out.quantity("twirl_second_moment", check.mc.clone());
    out.bound(BoundCheck::le("twirl_identity_sigmas", check.sigmas, 3.0, true));
    out.detail(
        "formula",
        json!({
            "alpha": reals(&check.formula.alpha),
            "tau_products": reals(&check.formula.tau_products),
            "rho_products": reals(&check.formula.rho_products),
            "value": num(check.formula.value),
        }),
    );
    out.detail("sigmas", num(check.sigmas));
    out.detail("pair", json!(if cfg.options.tilted { "tilted" } else { "independent" }));
    Ok(out)
}
