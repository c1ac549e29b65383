//! covering: two-party soft covering with iid or sticky codebooks.

use oneshot_core::covering::{
    covering_error_mc, dependence_certificate, nonpairwise_bound, nonpairwise_thresholds, rate_thresholds,
    subset_name, theorem_main_bound, CoveringProblem, RateThresholds, Sampler, LOEWNER_TOLERANCE,
};
use oneshot_core::linalg::TensorLayout;
use oneshot_core::mc::TrialExecutor;
use oneshot_core::random::{random_density, random_probability};
use oneshot_core::states::{CqState, ProbDist};
use rand::Rng;
use serde_json::{json, Value};

use super::instance_rng;
use crate::config::{ExperimentConfig, SamplerOpt};
use crate::report::{num, BoundCheck, Outcome};
use crate::CliError;

/// Random two-party problem on `X (x) Y` with conditionals on `M`; the
/// sampling distributions are the marginals of `p`.
pub fn random_problem<R: Rng + ?Sized>(nx: usize, ny: usize, dm: usize, rank: usize, rng: &mut R) -> oneshot_core::Result<CoveringProblem> {
    let w = random_probability(nx * ny, rng);
    let mut px = vec![0.0; nx];
    let mut py = vec![0.0; ny];
    for (k, p) in w.iter().enumerate() {
        px[k / ny] += p;
        py[k % ny] += p;
    }
    let m = TensorLayout::single("M", dm)?;
    let conds = (0..nx * ny).map(|_| random_density(dm, rank, rng).relabel(m.clone())).collect::<oneshot_core::Result<Vec<_>>>()?;
    let control = CqState::new(TensorLayout::new(&[("X", nx), ("Y", ny)])?, ProbDist::normalized(w)?, conds)?;
    CoveringProblem::new(control, vec![ProbDist::normalized(px)?, ProbDist::normalized(py)?])
}

fn thresholds_json(t: &RateThresholds, labels: &[String], sizes: &[usize]) -> Value {
    let rows: Vec<Value> = t
        .thresholds
        .iter()
        .map(|(mask, th)| {
            let bits: f64 = (0..sizes.len()).filter(|i| mask & (1 << i) != 0).map(|i| (sizes[i] as f64).log2()).sum();
            json!({"subset": subset_name(*mask, labels), "threshold_bits": num(*th), "log_size_bits": num(bits), "pass": bits > *th})
        })
        .collect();
    json!({"subsets": rows, "compliant": t.compliant(sizes)})
}

pub fn run(cfg: &ExperimentConfig, exec: &dyn TrialExecutor) -> Result<Outcome, CliError> {
    cfg.expect_sizes(&["a", "b"])?;
    let sizes = [cfg.size("a", 4), cfg.size("b", 4)];
    let eps = cfg.epsilon_or(0.01);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::Config("covering needs 0 < epsilon < 1".into()));
    }
    let eta = cfg.eta.unwrap_or(0.25);
    let r = cfg.random_instance(&[2, 2, 2])?;
    let rank = r.rank.unwrap_or(r.dims[2]).min(r.dims[2]);
    let prob = random_problem(r.dims[0], r.dims[1], r.dims[2], rank, &mut instance_rng(r.seed))?;
    let samplers = match cfg.options.sampler {
        SamplerOpt::Sticky => [Sampler::sticky(eta, prob.sampling()[0].clone())?, Sampler::sticky(eta, prob.sampling()[1].clone())?],
        SamplerOpt::Iid => [Sampler::iid(prob.sampling()[0].clone())?, Sampler::iid(prob.sampling()[1].clone())?],
    };
    let cert = dependence_certificate(&prob, [&samplers[0], &samplers[1]], cfg.options.budget)?;
    let verified = cert.verify(&prob, LOEWNER_TOLERANCE)?;
    let labels: Vec<String> = prob.control().classical_layout().labels().to_vec();
    let main = rate_thresholds(&prob, cert.f, eps)?;
    let pairless = nonpairwise_thresholds(&prob, cert.f, eps)?;

    let mut out = Outcome { streams: cfg.trials as u64, ..Outcome::default() };
    let est = covering_error_mc(&prob, &samplers, &sizes, cfg.trials, cfg.seed, exec)?;
    let mean = est.mean;
    out.quantity("covering_error", est);

    let main_bound = theorem_main_bound(2, eps, cert.e, cert.g);
    let pair_bound = nonpairwise_bound(eps, cert.e, cert.g);
    out.bound(BoundCheck::le("theorem_main_bound", mean, main_bound, verified && main.compliant(&sizes)));
    out.bound(BoundCheck::le("nonpairwise_bound", mean, pair_bound, verified && pairless.compliant(&sizes)));
    out.detail("epsilon", num(eps));
    out.detail("sizes", json!({"a": sizes[0], "b": sizes[1]}));
    out.detail(
        "sampler",
        json!({"kind": match cfg.options.sampler { SamplerOpt::Sticky => "sticky", SamplerOpt::Iid => "iid" }, "eta": num(eta)}),
    );
    out.detail(
        "certificate",
        json!({
            "e": num(cert.e),
            "f": num(cert.f),
            "g": num(cert.g),
            "budget": num(cfg.options.budget),
            "intersection_distance": num(cert.intersection_distance),
            "verified": verified,
        }),
    );
    out.detail("rate_thresholds", thresholds_json(&main, &labels, &sizes));
    out.detail("nonpairwise_thresholds", thresholds_json(&pairless, &labels, &sizes));
    out.detail("compliant", json!(main.compliant(&sizes)));
    Ok(out)
}
