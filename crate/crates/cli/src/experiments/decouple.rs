//! decouple: Haar-random decoupling error, rate conditions and the
//! trace-product bounds of the tilted construction.

use oneshot_core::decoupling::{
    decoupling_condition_check, decoupling_error_mc, flatten_reference, hat_extend, random_flat_instance,
    theorem_bound, CPSuperoperator, DecouplingInstance, TiltedConstruction,
};
use oneshot_core::linalg::TensorLayout;
use oneshot_core::mc::TrialExecutor;
use oneshot_core::random::random_state_on;
use oneshot_core::Error;
use rand::Rng;
use serde_json::{json, Value};

use super::instance_rng;
use crate::config::{ChannelOpt, ExperimentConfig};
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Environment dimension of generated channels.
const ENV_DIM: usize = 2;

/// Instance on `A1 A2 R` with maximally mixed `rho^R`; the channel kind
/// decides the output. Random channels also have a flat `tau^E`.
pub fn build_instance<R: Rng + ?Sized>(
    dims: [usize; 4],
    rank: usize,
    channel: ChannelOpt,
    rng: &mut R,
) -> Result<DecouplingInstance, CliError> {
    let [a1, a2, dr, de] = dims;
    let input = TensorLayout::new(&[("A1", a1), ("A2", a2)])?;
    let layout = TensorLayout::new(&[("A1", a1), ("A2", a2), ("R", dr)])?;
    Ok(match channel {
        ChannelOpt::Random => random_flat_instance([a1, a2], dr, de, rank, ENV_DIM, rng)?,
        ChannelOpt::FullTrace => {
            DecouplingInstance::new(flatten_reference(&random_state_on(&layout, rank, rng))?, CPSuperoperator::full_trace(input)?)?
        }
        ChannelOpt::Identity => {
            if de != a1 * a2 {
                return Err(CliError::Config(format!("identity channel needs |E| = |A1||A2| = {}", a1 * a2)));
            }
            let out = TensorLayout::single("E", de)?;
            DecouplingInstance::new(flatten_reference(&random_state_on(&layout, rank, rng))?, CPSuperoperator::identity(input, out)?)?
        }
        ChannelOpt::Constant => return Err(CliError::Config("decouple supports random, full-trace and identity channels".into())),
    })
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&[])?;
    let eps = cfg.epsilon_or(0.1);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::Config("decouple needs 0 < epsilon < 1".into()));
    }
    let r = cfg.random_instance(&[2, 2, 2, 2])?;
    let dims = [r.dims[0], r.dims[1], r.dims[2], r.dims[3]];
    let full = dims[0] * dims[1] * dims[2];
    let inst = build_instance(dims, r.rank.unwrap_or(full).min(full), cfg.options.channel, &mut instance_rng(r.seed))?;
    let conditions = decoupling_condition_check(&inst, eps)?;
    let compliant = conditions.iter().all(|c| c.pass);
    let simulated = if cfg.options.hat { hat_extend(&inst)? } else { inst.clone() };

    let mut out = Outcome { streams: cfg.trials as u64, ..Outcome::default() };
    let est = decoupling_error_mc(&simulated, cfg.trials, cfg.seed, exec)?;
    let mean = est.mean;
    out.quantity("decoupling_error", est);
    out.bound(BoundCheck::le("theorem_decoupling_bound", mean, theorem_bound(eps), compliant));

    // trace-product bounds need flat marginals and a small smoothing parameter
    let lemma = if eps < 0.25 {
        match TiltedConstruction::new(&inst, eps) {
            Ok(c) => Some(c.trace_product_bounds()?),
            Err(Error::Precondition(msg)) => {
                out.detail("trace_product_bounds_skipped", json!(msg));
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        out.detail("trace_product_bounds_skipped", json!("epsilon must be below 1/4"));
        None
    };
    for b in lemma.iter().flatten() {
        out.bound(BoundCheck::le(&format!("trace_product_{}", b.name), b.value, b.bound, true));
    }
    let rows: Vec<Value> = conditions
        .iter()
        .map(|c| json!({"name": c.name, "lhs": num(c.lhs), "threshold": num(c.threshold), "pass": c.pass}))
        .collect();
    out.detail("epsilon", num(eps));
    out.detail("conditions", Value::Array(rows));
    out.detail("compliant", json!(compliant));
    out.detail("hat_extended", json!(cfg.options.hat));
    out.detail("channel", serde_json::to_value(cfg.options.channel).unwrap_or(Value::Null));
    Ok(out)
}
