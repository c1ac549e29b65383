//! cmg and wiretap-privacy: layered two-sender covering as seen by Eve.

use oneshot_core::linalg::TensorLayout;
use oneshot_core::mc::TrialExecutor;
use oneshot_core::random::{random_density, random_probability};
use oneshot_core::states::ProbDist;
use oneshot_core::wiretap::{
    cmg_lemma_bound, cmg_quantity_mc, cmg_scale_factor, control_state, privacy_rate_check, wiretap_alpha,
    wiretap_privacy_mc, CmgSizes, ControlDistribution, CqChannelE, InnerSampler, Normalization, PrivacyVariant,
    RateSplit,
};
use rand::Rng;
use serde_json::{json, Value};

use super::instance_rng;
use crate::config::{ChannelOpt, ExperimentConfig, NormalizationOpt, SamplerOpt, VariantOpt};
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Random control distribution on `X'X`, `Y'Y` and a random (or constant)
/// classical-quantum channel to `E`.
pub fn random_setup<R: Rng + ?Sized>(
    dims: [usize; 5],
    rank: usize,
    constant: bool,
    rng: &mut R,
) -> oneshot_core::Result<(ControlDistribution, CqChannelE)> {
    let [xp, x, yp, y, de] = dims;
    let alice = ProbDist::normalized(random_probability(xp * x, rng))?;
    let bob = ProbDist::normalized(random_probability(yp * y, rng))?;
    let cd = ControlDistribution::single(alice, bob, [xp, x, yp, y])?;
    let e = TensorLayout::single("E", de)?;
    let ch = if constant {
        CqChannelE::constant(random_density(de, rank, rng).relabel(e)?, x, y)?
    } else {
        let outs = (0..x * y).map(|_| random_density(de, rank, rng).relabel(e.clone())).collect::<oneshot_core::Result<Vec<_>>>()?;
        CqChannelE::new(outs, x, y)?
    };
    Ok((cd, ch))
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor, wiretap: bool) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&["l_prime", "l", "m_prime", "m"])?;
    let sizes = CmgSizes::new(cfg.size("l_prime", 2), cfg.size("l", 2), cfg.size("m_prime", 2), cfg.size("m", 2))?;
    let eps = cfg.epsilon_or(0.01);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::Config("epsilon must lie in (0, 1)".into()));
    }
    let constant = match cfg.options.channel {
        ChannelOpt::Random => false,
        ChannelOpt::Constant => true,
        other => return Err(CliError::Config(format!("channel {other:?} is not available for {}", cfg.experiment.name()))),
    };
    let eta = cfg.eta.unwrap_or(0.25);
    let samplers = match cfg.options.sampler {
        SamplerOpt::Sticky => (InnerSampler::Sticky(eta), InnerSampler::Sticky(eta)),
        SamplerOpt::Iid => (InnerSampler::Iid, InnerSampler::Iid),
    };
    let r = cfg.random_instance(&[2, 2, 2, 2, 2])?;
    let dims = [r.dims[0], r.dims[1], r.dims[2], r.dims[3], r.dims[4]];
    let (cd, ch) = random_setup(dims, r.rank.unwrap_or(dims[4]).min(dims[4]), constant, &mut instance_rng(r.seed))?;
    let control = control_state(&cd, &ch, 0)?;
    let f = cmg_scale_factor(&cd, &ch, 0, samplers)?;
    let variant = match cfg.options.variant {
        VariantOpt::Lemma => PrivacyVariant::Lemma,
        VariantOpt::Theorem => PrivacyVariant::Theorem,
    };
    let rows = privacy_rate_check(&control, sizes, eps, f, variant)?;
    let compliant = rows.iter().all(|r| r.pass);
    let norm = match cfg.options.normalization {
        NormalizationOpt::Uniform => Normalization::Uniform,
        NormalizationOpt::AsPrinted => Normalization::AsPrinted,
    };

    let mut out = Outcome { streams: cfg.trials as u64, ..Outcome::default() };
    let lemma = cmg_lemma_bound(eps, 0.0);
    let mean;
    if wiretap {
        if norm != Normalization::Uniform {
            return Err(CliError::Config("wiretap-privacy always uses the uniform normalization".into()));
        }
        let [r1, r1p, r2, r2p] = cfg.options.rates;
        let rates = RateSplit::new(r1, r1p, r2, r2p)?;
        let counts = rates.counts()?;
        let est = wiretap_privacy_mc(&cd, &ch, rates, sizes, samplers, cfg.trials, cfg.seed, exec)?;
        mean = est.mean;
        out.quantity("privacy_error", est);
        out.detail("message_counts", json!(counts));
        out.detail("wiretap_alpha", num(wiretap_alpha(eps, 0.0)));
        out.detail("decoder_conditions", json!(cfg.options.decoder_conditions));
        out.bound(BoundCheck::le("privacy_lemma_bound", mean, lemma, compliant));
    } else {
        let est = cmg_quantity_mc(&cd, &ch, sizes, samplers, norm, cfg.trials, cfg.seed, exec)?;
        let doubled = cmg_quantity_mc(&cd, &ch, sizes.doubled(), samplers, norm, cfg.trials, cfg.seed, exec)?;
        mean = est.mean;
        let gap = (est.stderr.powi(2) + doubled.stderr.powi(2)).sqrt();
        out.bound(BoundCheck::le("doubling_lowers_mean", doubled.mean + 3.0 * gap, est.mean, false));
        out.quantity("cmg_quantity", est);
        out.quantity("cmg_quantity_doubled", doubled);
        out.bound(BoundCheck::le("cmg_lemma_bound", mean, lemma, compliant && norm == Normalization::Uniform));
    }
    let constraints: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "name": r.name,
                "lhs_bits": num(r.lhs_bits),
                "information": num(r.information),
                "threshold_bits": num(r.threshold),
                "pass": r.pass,
            })
        })
        .collect();
    out.detail("epsilon", num(eps));
    out.detail("normalization", json!(norm.name()));
    out.detail("scale_factor_f", num(f));
    out.detail("rate_constraints", Value::Array(constraints));
    out.detail("compliant", json!(compliant));
    out.detail(
        "sizes",
        json!({"l_prime": sizes.l_prime, "l": sizes.l, "m_prime": sizes.m_prime, "m": sizes.m}),
    );
    Ok(out)
}
