//! Convex split, multipartite soft covering, samplers with limited pairwise
//! dependence and their dependence certificates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::divergences::{smooth_renyi_div, RenyiOrder, SmoothingParam};
use crate::error::{Error, Result};
use crate::linalg::{
    max_abs, trace_distance, CMatrix, DensityOperator, HermitianOperator, TensorLayout,
};
use crate::mc::{trial_rng, McEstimate, TrialExecutor};
use crate::states::{intersect_dist, ravel, unravel, CqState, ProbDist};

/// Largest dense matrix side built by the convex-split routines.
pub const DENSE_SIDE_CAP: usize = 4096;
/// Largest number of type-class pairs enumerated exactly.
pub const TYPE_CLASS_CAP: usize = 2_000_000;
/// Loewner tolerance for certificate checks.
pub const LOEWNER_TOLERANCE: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Covering problems and samplers
// ---------------------------------------------------------------------------

/// Control state `sum p(x_1..x_k) |x><x| (x) rho_x` together with the
/// per-party sampling distributions `q_i`.
#[derive(Clone, Debug)]
pub struct CoveringProblem {
    control: CqState,
    sampling: Vec<ProbDist>,
}

impl CoveringProblem {
    pub fn new(control: CqState, sampling: Vec<ProbDist>) -> Result<Self> {
        let dims = control.classical_layout().dims().to_vec();
        if dims.len() != sampling.len() {
            return Err(Error::AlphabetMismatch(format!(
                "{} parties but {} sampling distributions",
                dims.len(),
                sampling.len()
            )));
        }
        for (i, (q, d)) in sampling.iter().zip(&dims).enumerate() {
            if q.len() != *d {
                return Err(Error::AlphabetMismatch(format!("party {i}: alphabet {d}, sampling over {}", q.len())));
            }
        }
        let p = control.distribution().weights();
        for (x, w) in p.iter().enumerate() {
            if *w > 0.0 {
                for (i, xi) in unravel(x, &dims).into_iter().enumerate() {
                    if sampling[i].weights()[xi] <= 0.0 {
                        return Err(Error::SupportViolation(format!(
                            "symbol {xi} of party {i} has p > 0 but q = 0"
                        )));
                    }
                }
            }
        }
        Ok(Self { control, sampling })
    }

    pub fn parties(&self) -> usize {
        self.sampling.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.control.classical_layout().dims()
    }

    pub fn control(&self) -> &CqState {
        &self.control
    }

    pub fn sampling(&self) -> &[ProbDist] {
        &self.sampling
    }

    /// `rho^M = sum_x p(x) rho_x`.
    pub fn target(&self) -> DensityOperator {
        self.control.quantum_marginal()
    }
}

/// Codebook sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerKind {
    Iid,
    /// With probability `eta` every coordinate copies one common draw.
    Sticky(f64),
}

#[derive(Clone, Debug)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub base: ProbDist,
}

impl Sampler {
    pub fn new(kind: SamplerKind, base: ProbDist) -> Result<Self> {
        if let SamplerKind::Sticky(eta) = kind {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Precondition(format!("sticky parameter {eta} outside [0, 1]")));
            }
        }
        if base.total() <= 0.0 {
            return Err(Error::InvalidDistribution("sampling distribution has no mass".into()));
        }
        Ok(Self { kind, base })
    }

    pub fn iid(base: ProbDist) -> Result<Self> {
        Self::new(SamplerKind::Iid, base)
    }

    pub fn sticky(eta: f64, base: ProbDist) -> Result<Self> {
        Self::new(SamplerKind::Sticky(eta), base)
    }

    fn eta(&self) -> f64 {
        match self.kind {
            SamplerKind::Iid => 0.0,
            SamplerKind::Sticky(eta) => eta,
        }
    }

    /// Draw an `a`-tuple of symbols.
    pub fn sample<R: Rng + ?Sized>(&self, a: usize, rng: &mut R) -> Result<Vec<usize>> {
        if a == 0 {
            return Err(Error::Precondition("codebook size must be at least 1".into()));
        }
        let dist = WeightedIndex::new(self.base.weights())
            .map_err(|e| Error::InvalidDistribution(format!("{e}")))?;
        let eta = self.eta();
        if eta > 0.0 && rng.random::<f64>() < eta {
            let z = dist.sample(rng);
            return Ok(alloc::vec![z; a]);
        }
        Ok((0..a).map(|_| dist.sample(rng)).collect())
    }

    /// Exact marginal on two distinct coordinates, row-major `n x n`.
    pub fn pair_marginal(&self) -> Vec<f64> {
        let q = self.base.normalized_weights();
        let n = q.len();
        let eta = self.eta();
        let mut out = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (1.0 - eta) * q[i] * q[j] + if i == j { eta * q[i] } else { 0.0 };
            }
        }
        out
    }

    /// `qbar(x' | x) = (1 - eta) q(x') + eta [x' = x]`.
    pub fn conditional(&self, x: usize) -> Vec<f64> {
        let eta = self.eta();
        self.base
            .normalized_weights()
            .into_iter()
            .enumerate()
            .map(|(j, q)| (1.0 - eta) * q + if j == x { eta } else { 0.0 })
            .collect()
    }
}

trait Normalized {
    fn normalized_weights(&self) -> Vec<f64>;
}

impl Normalized for ProbDist {
    fn normalized_weights(&self) -> Vec<f64> {
        let t = self.total();
        self.weights().iter().map(|w| w / t).collect()
    }
}

fn symbol_counts(codebook: &[usize], n: usize) -> Result<Vec<f64>> {
    let mut c = alloc::vec![0.0; n];
    for &x in codebook {
        *c.get_mut(x).ok_or_else(|| Error::Precondition(format!("symbol {x} outside alphabet of size {n}")))? += 1.0;
    }
    Ok(c)
}

/// Sample average covering state for per-party codebooks.
pub fn sample_average_state(prob: &CoveringProblem, codebooks: &[Vec<usize>]) -> Result<DensityOperator> {
    if codebooks.len() != prob.parties() {
        return Err(Error::Precondition(format!("{} codebooks for {} parties", codebooks.len(), prob.parties())));
    }
    let dims = prob.dims();
    let mut freq = Vec::with_capacity(dims.len());
    for (i, cb) in codebooks.iter().enumerate() {
        if cb.is_empty() {
            return Err(Error::Precondition(format!("codebook {i} is empty")));
        }
        let c = symbol_counts(cb, dims[i])?;
        let q = prob.sampling[i].weights();
        for (x, n) in c.iter().enumerate() {
            if *n > 0.0 && q[x] <= 0.0 {
                return Err(Error::SupportViolation(format!("party {i} sampled symbol {x} with q = 0")));
            }
        }
        let a = cb.len() as f64;
        freq.push(c.into_iter().map(|n| n / a).collect::<Vec<_>>());
    }
    let control = prob.control();
    let layout = control.quantum_layout().clone();
    let mut acc = CMatrix::zeros(layout.side(), layout.side());
    for (x, p) in control.distribution().weights().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let digits = unravel(x, dims);
        let mut w = *p;
        for (i, xi) in digits.iter().enumerate() {
            w *= freq[i][*xi] / prob.sampling[i].weights()[*xi];
            if w == 0.0 {
                break;
            }
        }
        if w != 0.0 {
            acc += control.conditional(x).matrix().scale(w);
        }
    }
    DensityOperator::from_psd(HermitianOperator::new(acc, layout)?)
}

/// Monte-Carlo estimate of `E ||sigma_codebooks - rho^M||_1`.
pub fn covering_error_mc(
    prob: &CoveringProblem,
    samplers: &[Sampler],
    sizes: &[usize],
    trials: usize,
    seed: u64,
    exec: &dyn TrialExecutor,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    if samplers.len() != prob.parties() || sizes.len() != prob.parties() {
        return Err(Error::Precondition("one sampler and one size per party".into()));
    }
    let target = prob.target();
    let rows = exec.run(trials, &|t| {
        let mut rng = trial_rng(seed, t);
        let books = samplers
            .iter()
            .zip(sizes)
            .map(|(s, a)| s.sample(*a, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let sigma = sample_average_state(prob, &books)?;
        Ok(alloc::vec![trace_distance(&sigma, &target)?])
    })?;
    Ok(McEstimate::from_values(rows.into_iter().map(|r| r[0]).collect()))
}

// ---------------------------------------------------------------------------
// Dependence certificates
// ---------------------------------------------------------------------------

/// Scale factors `(e, f, g)` with the witness operators they certify.
#[derive(Clone, Debug)]
pub struct DependenceCertificate {
    pub e: f64,
    pub f: f64,
    pub g: f64,
    /// `rho(X)_{xy}`, `rho(Y)_{xy}`, `rho()_{xy}` indexed row-major by `(x, y)`.
    pub witness_x: Vec<HermitianOperator>,
    pub witness_y: Vec<HermitianOperator>,
    pub witness_0: Vec<HermitianOperator>,
    /// Perturbed distributions `p(X)`, `p(Y)`, `p()`.
    pub p_x: ProbDist,
    pub p_y: ProbDist,
    pub p_0: ProbDist,
    /// `||p - p ∩ p(X) ∩ p(Y) ∩ p()||_1`.
    pub intersection_distance: f64,
}

/// Largest eigenvalue of `ref^{-1/2} w ref^{-1/2}`; `+inf` when `w` leaks
/// out of the support of `ref`.
fn relative_max(w: &HermitianOperator, reference: &HermitianOperator) -> Result<f64> {
    let support = reference.support_projector();
    let inside = support.trace_product(w)?;
    if w.trace() - inside > crate::linalg::SUPPORT_TOLERANCE * w.trace().max(1e-300) {
        return Ok(f64::INFINITY);
    }
    let r = reference.pseudo_power(-0.5);
    Ok(w.sandwich(r.matrix())?.lambda_max())
}

/// Remove the labels with the largest ratios while the removed mass stays
/// below `budget`; returns the kept distribution and the largest ratio left.
fn trim(p: &[f64], ratios: &[f64], budget: f64) -> Result<(ProbDist, f64)> {
    let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    let mut kept = p.to_vec();
    let mut removed = 0.0;
    let mut best = f64::NEG_INFINITY;
    for &i in &order {
        if removed + p[i] < budget {
            removed += p[i];
            kept[i] = 0.0;
        } else {
            best = best.max(ratios[i]);
        }
    }
    Ok((ProbDist::new(kept)?, best))
}

/// Dependence certificate for a two-party problem. `budget` is the
/// allowed `l1` perturbation `e` of `p^{XY}`; `0` asks for an unperturbed
/// certificate.
pub fn dependence_certificate(prob: &CoveringProblem, samplers: [&Sampler; 2], budget: f64) -> Result<DependenceCertificate> {
    if prob.parties() != 2 {
        return Err(Error::Precondition("dependence certificates are defined for two parties".into()));
    }
    if !(0.0..1.0).contains(&budget) {
        return Err(Error::InvalidEpsilon(budget));
    }
    let (nx, ny) = (prob.dims()[0], prob.dims()[1]);
    let control = prob.control();
    let layout = control.quantum_layout().clone();
    let side = layout.side();
    let p = control.distribution().weights();
    let qx = prob.sampling[0].normalized_weights();
    let qy = prob.sampling[1].normalized_weights();
    let px: Vec<f64> = (0..nx).map(|x| (0..ny).map(|y| p[x * ny + y]).sum()).collect();
    let py: Vec<f64> = (0..ny).map(|y| (0..nx).map(|x| p[x * ny + y]).sum()).collect();
    let rho = |x: usize, y: usize| control.conditional(x * ny + y).matrix();
    let zero = || CMatrix::zeros(side, side);

    // rho_x, rho_y, rho^M
    let mut rho_x: Vec<CMatrix> = (0..nx).map(|_| zero()).collect();
    let mut rho_y: Vec<CMatrix> = (0..ny).map(|_| zero()).collect();
    let mut rho_m = zero();
    for x in 0..nx {
        for y in 0..ny {
            let w = p[x * ny + y];
            if w == 0.0 {
                continue;
            }
            rho_x[x] += rho(x, y).scale(w / px[x]);
            rho_y[y] += rho(x, y).scale(w / py[y]);
            rho_m += rho(x, y).scale(w);
        }
    }
    let op = |m: CMatrix| HermitianOperator::new(m, layout.clone());
    let iid = matches!(samplers[0].kind, SamplerKind::Iid) && matches!(samplers[1].kind, SamplerKind::Iid);

    let mut wx = Vec::with_capacity(nx * ny);
    let mut wy = Vec::with_capacity(nx * ny);
    let mut w0 = Vec::with_capacity(nx * ny);
    let mut rx = alloc::vec![0.0; nx * ny];
    let mut ry = alloc::vec![0.0; nx * ny];
    let mut r0 = alloc::vec![0.0; nx * ny];
    let rho_x_ops = rho_x.into_iter().map(op).collect::<Result<Vec<_>>>()?;
    let rho_y_ops = rho_y.into_iter().map(op).collect::<Result<Vec<_>>>()?;
    let rho_m_op = op(rho_m)?;
    for x in 0..nx {
        let cx = samplers[0].conditional(x);
        for y in 0..ny {
            let cy = samplers[1].conditional(y);
            let (mut a, mut b, mut c) = (zero(), zero(), zero());
            if px[x] > 0.0 {
                for y2 in 0..ny {
                    let w = p[x * ny + y2];
                    if w > 0.0 && cy[y2] > 0.0 {
                        a += rho(x, y2).scale(cy[y2] * (w / px[x]) / qy[y2]);
                    }
                }
            }
            if py[y] > 0.0 {
                for x2 in 0..nx {
                    let w = p[x2 * ny + y];
                    if w > 0.0 && cx[x2] > 0.0 {
                        b += rho(x2, y).scale(cx[x2] * (w / py[y]) / qx[x2]);
                    }
                }
            }
            for x2 in 0..nx {
                for y2 in 0..ny {
                    let w = p[x2 * ny + y2];
                    if w > 0.0 && cx[x2] * cy[y2] > 0.0 {
                        c += rho(x2, y2).scale(cx[x2] * cy[y2] * w / (qx[x2] * qy[y2]));
                    }
                }
            }
            let (a, b, c) = (op(a)?, op(b)?, op(c)?);
            let k = x * ny + y;
            if p[k] > 0.0 {
                rx[k] = relative_max(&a, &rho_x_ops[x])?;
                ry[k] = relative_max(&b, &rho_y_ops[y])?;
                r0[k] = relative_max(&c, &rho_m_op)?;
            }
            wx.push(a);
            wy.push(b);
            w0.push(c);
        }
    }
    let (p_x, fx) = trim(p, &rx, budget)?;
    let (p_y, fy) = trim(p, &ry, budget)?;
    let (p_0, g1) = trim(p, &r0, budget)?;
    let perturbed = p_x != *control.distribution() || p_y != *control.distribution() || p_0 != *control.distribution();
    let (e, f, g) = if iid && !perturbed {
        (0.0, 1.0, 0.0)
    } else {
        let f = fx.max(fy).max(1.0);
        if !f.is_finite() {
            return Err(Error::SupportViolation("witness leaves the support of its reference; f is infinite".into()));
        }
        (if perturbed { budget } else { 0.0 }, f, (g1 - 1.0).max(0.0))
    };
    let inter = intersect_dist(&intersect_dist(&intersect_dist(control.distribution(), &p_x)?, &p_y)?, &p_0)?;
    let intersection_distance = control.distribution().l1_distance(&inter)?;
    Ok(DependenceCertificate { e, f, g, witness_x: wx, witness_y: wy, witness_0: w0, p_x, p_y, p_0, intersection_distance })
}

impl DependenceCertificate {
    /// Check the three operator inequalities blockwise at `tol`.
    pub fn verify(&self, prob: &CoveringProblem, tol: f64) -> Result<bool> {
        let ny = prob.dims()[1];
        let nx = prob.dims()[0];
        let control = prob.control();
        let p = control.distribution().weights();
        let layout = control.quantum_layout().clone();
        let px: Vec<f64> = (0..nx).map(|x| (0..ny).map(|y| p[x * ny + y]).sum()).collect();
        let py: Vec<f64> = (0..ny).map(|y| (0..nx).map(|x| p[x * ny + y]).sum()).collect();
        let rho_m = prob.target();
        for x in 0..nx {
            for y in 0..ny {
                let k = x * ny + y;
                let mut rx = CMatrix::zeros(layout.side(), layout.side());
                let mut ry = rx.clone();
                for y2 in 0..ny {
                    if p[x * ny + y2] > 0.0 {
                        rx += control.conditional(x * ny + y2).matrix().scale(p[x * ny + y2] / px[x]);
                    }
                }
                for x2 in 0..nx {
                    if p[x2 * ny + y] > 0.0 {
                        ry += control.conditional(x2 * ny + y).matrix().scale(p[x2 * ny + y] / py[y]);
                    }
                }
                // p(.)(xy) W_xy <= f p(xy) rho_x and friends
                let lhs_x = self.witness_x[k].scale(self.p_x.weights()[k]);
                let rhs_x = HermitianOperator::new(rx.scale(self.f * p[k]), layout.clone())?;
                let lhs_y = self.witness_y[k].scale(self.p_y.weights()[k]);
                let rhs_y = HermitianOperator::new(ry.scale(self.f * p[k]), layout.clone())?;
                let lhs_0 = self.witness_0[k].scale(self.p_0.weights()[k]);
                let rhs_0 = rho_m.as_operator().scale((1.0 + self.g) * p[k]);
                if !(lhs_x.loewner_leq(&rhs_x, tol)? && lhs_y.loewner_leq(&rhs_y, tol)? && lhs_0.loewner_leq(&rhs_0, tol)?) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Rates and bounds
// ---------------------------------------------------------------------------

/// Required bits for each non-empty subset of parties (as a bit mask).
#[derive(Clone, Debug)]
pub struct RateThresholds {
    pub thresholds: Vec<(u32, f64)>,
}

impl RateThresholds {
    /// `sum_{s in S} log A_s > threshold(S)` for every non-empty `S`.
    pub fn compliant(&self, sizes: &[usize]) -> bool {
        self.thresholds.iter().all(|(mask, t)| {
            let bits: f64 = sizes
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, a)| Float::log2(*a as f64))
                .sum();
            bits > *t
        })
    }

    pub fn get(&self, mask: u32) -> Option<f64> {
        self.thresholds.iter().find(|(m, _)| *m == mask).map(|(_, t)| *t)
    }
}

/// Subset name such as `"X1X2"` for reports.
pub fn subset_name(mask: u32, labels: &[String]) -> String {
    labels.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, l)| l.as_str()).collect()
}

/// `D^eps_inf(rho^{X_S M} || q^{X_S} (x) rho^M) + log f + 3 + log eps^{-1/2}`.
pub fn rate_thresholds(prob: &CoveringProblem, f: f64, eps: f64) -> Result<RateThresholds> {
    let k = prob.parties();
    if k > 16 {
        return Err(Error::CapExceeded(format!("{k} parties")));
    }
    let eps_p = SmoothingParam::new(eps)?;
    let labels: Vec<String> = prob.control().classical_layout().labels().to_vec();
    let rho_m = prob.target();
    let mut out = Vec::new();
    for mask in 1u32..(1 << k) {
        let keep: Vec<&str> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| labels[i].as_str()).collect();
        let marg = prob.control().marginal(&keep)?;
        let alpha = marg.embed()?;
        let mut q = ProbDist::new(alloc::vec![1.0])?;
        for i in (0..k).filter(|i| mask & (1 << i) != 0) {
            q = q.product(&prob.sampling[i])?;
        }
        let q_state = DensityOperator::diagonal(q.weights(), marg.classical_layout().clone())?;
        let beta = q_state.tensor(&rho_m)?;
        let d = smooth_renyi_div(&alpha, &beta, RenyiOrder::Infinity, eps_p)?.value;
        out.push((mask, d + Float::log2(f) + 3.0 + 0.5 * Float::log2(1.0 / eps)));
    }
    Ok(RateThresholds { thresholds: out })
}

/// Covering error guaranteed by the multipartite theorem (times `Tr rho`).
pub fn theorem_main_bound(k: usize, eps: f64, e: f64, g: f64) -> f64 {
    let two_k = Float::powi(2.0, k as i32);
    2.0 * Float::sqrt(
        10.0 * two_k * Float::powf(eps, 1.0 / 64.0)
            + Float::sqrt(30.0 * two_k * two_k * Float::powf(eps, 1.0 / 32.0) + 2.0 * two_k * e + g),
    ) + two_k * e
}

/// Two-party covering error bound under limited pairwise dependence.
pub fn nonpairwise_bound(eps: f64, e: f64, g: f64) -> f64 {
    2.0 * Float::sqrt(15.0 * Float::powf(eps, 1.0 / 64.0) + Float::sqrt(40.0 * Float::powf(eps, 1.0 / 32.0) + 8.0 * e + g))
        + 4.0 * e
}

/// The two-party rate region with its looser joint constraint
/// `log A + log B > D^eps_inf(rho^{XYM} || q^X q^Y rho^M) + 1 + log eps^{-1/2}`.
pub fn nonpairwise_thresholds(prob: &CoveringProblem, f: f64, eps: f64) -> Result<RateThresholds> {
    if prob.parties() != 2 {
        return Err(Error::Precondition("two parties required".into()));
    }
    let mut t = rate_thresholds(prob, f, eps)?;
    for (mask, v) in t.thresholds.iter_mut() {
        if *mask == 0b11 {
            *v += 1.0 - 3.0 - Float::log2(f);
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Convex split
// ---------------------------------------------------------------------------

/// `rho^{XYM}` on a three-factor layout `[X, Y, M]` with reference states
/// `alpha^X`, `beta^Y` and copy numbers `A`, `B`.
#[derive(Clone, Debug)]
pub struct ConvexSplitInstance {
    pub rho: DensityOperator,
    pub alpha: DensityOperator,
    pub beta: DensityOperator,
    pub a: usize,
    pub b: usize,
}

impl ConvexSplitInstance {
    pub fn new(rho: DensityOperator, alpha: DensityOperator, beta: DensityOperator, a: usize, b: usize) -> Result<Self> {
        let l = rho.layout();
        if l.len() != 3 {
            return Err(Error::InvalidLayout("convex split expects a layout [X, Y, M]".into()));
        }
        if a == 0 || b == 0 {
            return Err(Error::Precondition("A and B must be positive".into()));
        }
        let (dx, dy) = (l.dims()[0], l.dims()[1]);
        if alpha.side() != dx || beta.side() != dy {
            return Err(Error::DimensionMismatch { expected: dx * dy, found: alpha.side() * beta.side() });
        }
        let labels = l.labels();
        let rx = rho.partial_trace(&[labels[0].as_str()])?;
        let ry = rho.partial_trace(&[labels[1].as_str()])?;
        for (r, s, name) in [(rx, &alpha, "X"), (ry, &beta, "Y")] {
            let sp = s.support_projector().relabel(r.layout().clone())?;
            if r.trace() - sp.trace_product(&r)? > crate::linalg::SUPPORT_TOLERANCE * r.trace().max(1e-300) {
                return Err(Error::SupportViolation(format!("supp(rho^{name}) is not inside the reference support")));
            }
        }
        Ok(Self { rho, alpha, beta, a, b })
    }

    fn labels(&self) -> (String, String, String) {
        let l = self.rho.layout().labels();
        (l[0].clone(), l[1].clone(), l[2].clone())
    }

    fn dense_side(&self) -> Option<usize> {
        let d = self.rho.layout().dims();
        let mut side: usize = d[2];
        for _ in 0..self.a {
            side = side.checked_mul(d[0])?;
        }
        for _ in 0..self.b {
            side = side.checked_mul(d[1])?;
        }
        Some(side)
    }

    /// Layout `X_1 .. X_A Y_1 .. Y_B M`.
    pub fn split_layout(&self) -> Result<TensorLayout> {
        let (lx, ly, lm) = self.labels();
        let d = self.rho.layout().dims();
        let mut f: Vec<(String, usize)> = Vec::new();
        for a in 1..=self.a {
            f.push((format!("{lx}{a}"), d[0]));
        }
        for b in 1..=self.b {
            f.push((format!("{ly}{b}"), d[1]));
        }
        f.push((lm, d[2]));
        TensorLayout::new(&f)
    }

    /// Whether `rho` is block diagonal in the computational basis of `X Y`
    /// and `alpha`, `beta` are diagonal.
    pub fn is_classical(&self) -> bool {
        let d = self.rho.layout().dims();
        let m = d[2];
        let r = self.rho.matrix();
        let tol = 1e-12 * (1.0 + max_abs(r));
        for i in 0..r.nrows() {
            for j in 0..r.ncols() {
                if i / m != j / m && r[(i, j)].norm() > tol {
                    return false;
                }
            }
        }
        let diag = |s: &DensityOperator| {
            let s = s.matrix();
            (0..s.nrows()).all(|i| (0..s.ncols()).all(|j| i == j || s[(i, j)].norm() <= 1e-12))
        };
        diag(&self.alpha) && diag(&self.beta)
    }
}

/// One hypothesis of the convex-split lemma: `log(size) > D + log eps^{-1/20}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCondition {
    pub name: String,
    pub lhs_bits: f64,
    pub divergence: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// The three size conditions for `X`, `Y` and `XY`.
pub fn convex_split_conditions(inst: &ConvexSplitInstance, eps: f64) -> Result<Vec<SplitCondition>> {
    let param = SmoothingParam::new(eps)?;
    let (lx, ly, lm) = inst.labels();
    let rho_m = inst.rho.partial_trace(&[lm.as_str()])?;
    let extra = Float::log2(1.0 / eps) / 20.0;
    let (la, lb) = (Float::log2(inst.a as f64), Float::log2(inst.b as f64));
    let cases = [
        (alloc::vec![lx.as_str()], inst.alpha.tensor(&rho_m)?, la, lx.clone()),
        (alloc::vec![ly.as_str()], inst.beta.tensor(&rho_m)?, lb, ly.clone()),
        (alloc::vec![lx.as_str(), ly.as_str()], inst.alpha.tensor(&inst.beta)?.tensor(&rho_m)?, la + lb, format!("{lx}{ly}")),
    ];
    let mut out = Vec::with_capacity(3);
    for (regs, reference, lhs, name) in cases {
        let keep: Vec<&str> = regs.iter().copied().chain(core::iter::once(lm.as_str())).collect();
        let joint = inst.rho.partial_trace(&keep)?;
        let reference = reference.relabel(joint.layout().clone())?;
        let divergence = smooth_renyi_div(&joint, &reference, RenyiOrder::Infinity, param)?.value;
        let threshold = divergence + extra;
        out.push(SplitCondition { name, lhs_bits: lhs, divergence, threshold, pass: lhs > threshold });
    }
    Ok(out)
}

/// Lemma bound `10 eps^{1/64} Tr rho`.
pub fn convex_split_bound(eps: f64, trace: f64) -> f64 {
    10.0 * Float::powf(eps, 1.0 / 64.0) * trace
}

/// Dense `sigma^{X^A Y^B M}`; the matrix side is capped at `max_side`.
pub fn convex_split_state(inst: &ConvexSplitInstance, max_side: usize) -> Result<DensityOperator> {
    let layout = inst.split_layout()?;
    match inst.dense_side() {
        Some(s) if s <= max_side => {}
        _ => return Err(Error::CapExceeded(format!("convex split state with A={}, B={}", inst.a, inst.b))),
    }
    let (lx, ly, lm) = inst.labels();
    let order: Vec<String> = layout.labels().to_vec();
    let mut acc = CMatrix::zeros(layout.side(), layout.side());
    for a in 1..=inst.a {
        for b in 1..=inst.b {
            let xa = format!("{lx}{a}");
            let yb = format!("{ly}{b}");
            let first = TensorLayout::new(&[(xa.as_str(), inst.alpha.side()), (yb.as_str(), inst.beta.side()), (lm.as_str(), inst.rho.layout().dims()[2])])?;
            let mut term = inst.rho.relabel(first)?;
            for a2 in (1..=inst.a).filter(|&v| v != a) {
                term = term.tensor(&inst.alpha.relabel(TensorLayout::single(&format!("{lx}{a2}"), inst.alpha.side())?)?)?;
            }
            for b2 in (1..=inst.b).filter(|&v| v != b) {
                term = term.tensor(&inst.beta.relabel(TensorLayout::single(&format!("{ly}{b2}"), inst.beta.side())?)?)?;
            }
            acc += term.permute(&order)?.matrix();
        }
    }
    let n = (inst.a * inst.b) as f64;
    DensityOperator::from_psd(HermitianOperator::new(acc.scale(1.0 / n), layout)?)
}

/// Dense decoupled state `alpha^{(x)A} (x) beta^{(x)B} (x) rho^M`.
pub fn decoupled_state(inst: &ConvexSplitInstance, max_side: usize) -> Result<DensityOperator> {
    let layout = inst.split_layout()?;
    match inst.dense_side() {
        Some(s) if s <= max_side => {}
        _ => return Err(Error::CapExceeded(format!("decoupled state with A={}, B={}", inst.a, inst.b))),
    }
    let (lx, ly, lm) = inst.labels();
    let mut state = inst.rho.partial_trace(&[lm.as_str()])?;
    for a in (1..=inst.a).rev() {
        state = inst.alpha.relabel(TensorLayout::single(&format!("{lx}{a}"), inst.alpha.side())?)?.tensor(&state)?;
    }
    let order: Vec<String> = layout.labels().to_vec();
    for b in 1..=inst.b {
        state = state.tensor(&inst.beta.relabel(TensorLayout::single(&format!("{ly}{b}"), inst.beta.side())?)?)?;
    }
    state.permute(&order)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = alloc::vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + Float::ln(i as f64);
    }
    t
}

/// All count vectors of length `k` summing to `n`.
fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = alloc::vec![0; k];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, out);
        }
    }
    rec(0, n, &mut cur, &mut out);
    out
}

fn binomial_count(n: usize, k: usize) -> Option<usize> {
    // C(n + k - 1, k - 1)
    let top = n + k - 1;
    let r = k - 1;
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (top - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Multinomial log-probabilities of each count vector under `w`; `None`
/// entries have probability zero.
fn type_weights(types: &[Vec<usize>], w: &[f64], lf: &[f64]) -> Vec<Option<f64>> {
    types
        .iter()
        .map(|c| {
            let n: usize = c.iter().sum();
            let mut s = lf[n];
            for (ci, wi) in c.iter().zip(w) {
                if *ci > 0 {
                    if *wi <= 0.0 {
                        return None;
                    }
                    s += *ci as f64 * Float::ln(*wi) - lf[*ci];
                }
            }
            Some(s)
        })
        .collect()
}

/// Exact `||sigma - tau||_1`. Classical-`XY` instances are evaluated through
/// type classes (any `A`, `B` within [`TYPE_CLASS_CAP`]); others densely.
pub fn convex_split_error(inst: &ConvexSplitInstance) -> Result<f64> {
    if inst.is_classical() {
        convex_split_error_types(inst)
    } else {
        let s = convex_split_state(inst, DENSE_SIDE_CAP)?;
        let t = decoupled_state(inst, DENSE_SIDE_CAP)?;
        trace_distance(&s, &t)
    }
}

/// Dense evaluation regardless of structure (for cross-checks).
pub fn convex_split_error_dense(inst: &ConvexSplitInstance, max_side: usize) -> Result<f64> {
    let s = convex_split_state(inst, max_side)?;
    let t = decoupled_state(inst, max_side)?;
    trace_distance(&s, &t)
}

fn convex_split_error_types(inst: &ConvexSplitInstance) -> Result<f64> {
    let d = inst.rho.layout().dims();
    let (dx, dy, dm) = (d[0], d[1], d[2]);
    let nx = binomial_count(inst.a, dx).ok_or_else(|| Error::CapExceeded("type classes".into()))?;
    let ny = binomial_count(inst.b, dy).ok_or_else(|| Error::CapExceeded("type classes".into()))?;
    if nx.saturating_mul(ny) > TYPE_CLASS_CAP {
        return Err(Error::CapExceeded(format!("{} type-class pairs", nx.saturating_mul(ny))));
    }
    let alpha: Vec<f64> = (0..dx).map(|i| inst.alpha.matrix()[(i, i)].re).collect();
    let beta: Vec<f64> = (0..dy).map(|i| inst.beta.matrix()[(i, i)].re).collect();
    let r = inst.rho.matrix();
    let block = |x: usize, y: usize| {
        let o = (x * dy + y) * dm;
        r.view((o, o), (dm, dm)).into_owned()
    };
    let mut rho_m = CMatrix::zeros(dm, dm);
    // block_xy / (alpha_x beta_y), zero when the block vanishes
    let mut scaled: Vec<Option<CMatrix>> = Vec::with_capacity(dx * dy);
    for x in 0..dx {
        for y in 0..dy {
            let b = block(x, y);
            rho_m += &b;
            if max_abs(&b) == 0.0 {
                scaled.push(None);
            } else {
                scaled.push(Some(b.scale(1.0 / (alpha[x] * beta[y]))));
            }
        }
    }
    let lf = ln_factorials(inst.a.max(inst.b));
    let tx = compositions(inst.a, dx);
    let ty = compositions(inst.b, dy);
    let wx = type_weights(&tx, &alpha, &lf);
    let wy = type_weights(&ty, &beta, &lf);
    let ab = (inst.a * inst.b) as f64;
    let m_layout = TensorLayout::single("M", dm)?;
    let rho_m_op = HermitianOperator::new(rho_m, m_layout.clone())?;
    let mut terms = Vec::with_capacity(nx * ny);
    for (cx, lwx) in tx.iter().zip(&wx) {
        let Some(lwx) = lwx else { continue };
        for (cy, lwy) in ty.iter().zip(&wy) {
            let Some(lwy) = lwy else { continue };
            let mut s = CMatrix::zeros(dm, dm);
            for x in 0..dx {
                if cx[x] == 0 {
                    continue;
                }
                for y in 0..dy {
                    if let Some(m) = &scaled[x * dy + y] {
                        if cy[y] > 0 {
                            s += m.scale((cx[x] * cy[y]) as f64 / ab);
                        }
                    }
                }
            }
            let diff = HermitianOperator::new(s, m_layout.clone())?.sub(&rho_m_op)?;
            terms.push(Float::exp(lwx + lwy) * diff.schatten_norm(crate::linalg::Schatten::One));
        }
    }
    Ok(crate::mc::pairwise_sum(&terms))
}

/// Index helpers re-exported for callers building joint distributions.
pub fn joint_index(digits: &[usize], dims: &[usize]) -> usize {
    ravel(digits, dims)
}
