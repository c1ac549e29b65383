//! Renyi divergences of order 2 and infinity, their smoothed versions, the
//! entropic quantities built from them, and projector smoothing.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, trace_distance, CMatrix, DensityOperator, HermitianOperator, Schatten, TensorLayout, KERNEL_CUTOFF,
    SUPPORT_TOLERANCE,
};

/// Smoothing parameter in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidEpsilon(eps));
        }
        Ok(Self(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenyiOrder {
    Two,
    Infinity,
}

/// How a smoothed value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoothingMethod {
    /// No smoothing was applied (`eps = 0`).
    Exact,
    /// Feasible witness from eigenvalue truncation; the value is an upper
    /// bound on the true smoothed divergence.
    TruncationUpperBound,
}

/// Smoothed divergence value with the witness that certifies it.
#[derive(Clone, Debug)]
pub struct SmoothDivergence {
    pub value: f64,
    pub witness: DensityOperator,
    /// `||alpha - witness||_1`.
    pub distance: f64,
    pub method: SmoothingMethod,
}

fn check_pair(alpha: &HermitianOperator, beta: &HermitianOperator) -> Result<()> {
    if alpha.layout().dims() != beta.layout().dims() {
        return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", alpha.layout().dims(), beta.layout().dims())));
    }
    Ok(())
}

/// `Tr[(1 - Pi_beta) alpha]`.
fn out_of_support_mass(alpha: &HermitianOperator, support: &HermitianOperator) -> f64 {
    alpha.trace() - support.trace_product(alpha).unwrap_or(0.0)
}

/// `log2` with `log2(0) = -inf`.
fn log2(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        Float::log2(x)
    }
}

/// `D_2` or `D_inf` of `alpha` relative to PSD `beta`, in bits; `+inf` when
/// `alpha` has more than `1e-9 Tr alpha` weight outside the support of `beta`.
pub fn renyi_div(alpha: &DensityOperator, beta: &DensityOperator, order: RenyiOrder) -> Result<f64> {
    check_pair(alpha, beta)?;
    let a = relabel_like(alpha, beta)?;
    let support = beta.support_projector();
    if out_of_support_mass(&a, &support) > SUPPORT_TOLERANCE * a.trace() {
        return Ok(f64::INFINITY);
    }
    Ok(match order {
        RenyiOrder::Infinity => {
            let bi = beta.pseudo_power(-0.5);
            log2(a.sandwich(bi.matrix())?.lambda_max().max(0.0))
        }
        RenyiOrder::Two => {
            let bq = beta.pseudo_power(-0.25);
            2.0 * log2(a.sandwich(bq.matrix())?.schatten_norm(Schatten::Two))
        }
    })
}

fn relabel_like(alpha: &HermitianOperator, beta: &HermitianOperator) -> Result<HermitianOperator> {
    alpha.relabel(beta.layout().clone())
}

/// Smoothed divergence: minimum over PSD `alpha'` with
/// `||alpha - alpha'||_1 <= eps Tr alpha`.
///
/// The witness clips the spectrum of `beta^{-1/2} alpha beta^{-1/2}` at the
/// lowest level whose removed `alpha`-mass fits the budget. For order infinity
/// and commuting arguments this is the exact optimum; in general the value is
/// an upper bound.
pub fn smooth_renyi_div(
    alpha: &DensityOperator,
    beta: &DensityOperator,
    order: RenyiOrder,
    eps: SmoothingParam,
) -> Result<SmoothDivergence> {
    check_pair(alpha, beta)?;
    if eps.value() == 0.0 {
        return Ok(SmoothDivergence {
            value: renyi_div(alpha, beta, order)?,
            witness: alpha.clone(),
            distance: 0.0,
            method: SmoothingMethod::Exact,
        });
    }
    let a = relabel_like(alpha, beta)?;
    let mut budget = eps.value() * a.trace() * (1.0 - 1e-12);
    let support = beta.support_projector();
    let mut inner = a.clone();
    let mut spent = 0.0;
    if out_of_support_mass(&a, &support) > SUPPORT_TOLERANCE * a.trace() {
        // project into the support of beta first, paying the exact distance
        inner = a.sandwich(support.matrix())?;
        spent = trace_distance(&a, &inner)?;
        if spent > budget {
            return Ok(SmoothDivergence {
                value: f64::INFINITY,
                witness: alpha.clone(),
                distance: 0.0,
                method: SmoothingMethod::TruncationUpperBound,
            });
        }
        budget -= spent;
    }
    let b_inv = beta.pseudo_power(-0.5);
    let b_half = beta.pseudo_power(0.5);
    let g = inner.sandwich(b_inv.matrix())?;
    let e = g.eigh();
    let n = e.values.len();
    // beta-weight of each eigendirection of g
    let weights: Vec<f64> = (0..n)
        .map(|k| {
            let v = e.vector(k);
            (v.adjoint() * beta.matrix() * &v)[(0, 0)].re.max(0.0)
        })
        .collect();
    let level = water_level(&e.values, &weights, budget);
    let clipped = e.map(|l| l.max(0.0).min(level));
    let witness_op = HermitianOperator::new(&b_half.matrix().clone() * clipped * b_half.matrix(), beta.layout().clone())?;
    let witness = DensityOperator::from_psd(witness_op)?;
    let removed = inner.trace() - witness.trace();
    let value = match order {
        RenyiOrder::Infinity => log2(level),
        RenyiOrder::Two => renyi_div(&witness, beta, RenyiOrder::Two)?,
    };
    Ok(SmoothDivergence {
        value,
        witness: witness.relabel(alpha.layout().clone())?,
        distance: spent + removed.max(0.0),
        method: SmoothingMethod::TruncationUpperBound,
    })
}

/// Smallest `t >= 0` with `sum_i (g_i - t)_+ w_i <= budget`.
fn water_level(values: &[f64], weights: &[f64], budget: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let mut s = 0.0; // sum g_i w_i over the clipped set
    let mut w = 0.0; // sum w_i over the clipped set
    for (k, &i) in order.iter().enumerate() {
        s += values[i].max(0.0) * weights[i];
        w += weights[i];
        let next = order.get(k + 1).map(|&j| values[j].max(0.0)).unwrap_or(0.0);
        if w <= 0.0 {
            continue;
        }
        let t = (s - budget) / w;
        if t >= next {
            return t.min(top);
        }
    }
    0.0
}

/// Entropic quantity to evaluate.
#[derive(Clone, Debug)]
pub enum EntropicKind<'a> {
    /// `I(X:E) = D(rho^{XE} || rho^X (x) rho^E)`.
    MutualInformation { x: &'a [&'a str], e: &'a [&'a str], order: RenyiOrder },
    /// `H_min(A|R) = -D_inf(rho^{AR} || 1^A (x) rho^R)`.
    ConditionalMinEntropy { a: &'a [&'a str], r: &'a [&'a str] },
}

/// Smoothed entropic quantity in bits.
pub fn entropic(kind: &EntropicKind<'_>, state: &DensityOperator, eps: SmoothingParam) -> Result<f64> {
    match kind {
        EntropicKind::MutualInformation { x, e, order } => {
            let (alpha, beta) = mutual_information_pair(state, x, e)?;
            Ok(smooth_renyi_div(&alpha, &beta, *order, eps)?.value)
        }
        EntropicKind::ConditionalMinEntropy { a, r } => {
            let (alpha, beta) = conditional_pair(state, a, r)?;
            Ok(-smooth_renyi_div(&alpha, &beta, RenyiOrder::Infinity, eps)?.value)
        }
    }
}

/// `(rho^{XE}, rho^X (x) rho^E)` in the factor order `x ++ e`.
pub fn mutual_information_pair(state: &DensityOperator, x: &[&str], e: &[&str]) -> Result<(DensityOperator, DensityOperator)> {
    let both: Vec<&str> = x.iter().chain(e.iter()).copied().collect();
    let joint = state.partial_trace(&both)?;
    let rx = state.partial_trace(x)?;
    let re = state.partial_trace(e)?;
    Ok((joint, rx.tensor(&re)?))
}

/// `(rho^{AR}, 1^A (x) rho^R)` in the factor order `a ++ r`.
pub fn conditional_pair(state: &DensityOperator, a: &[&str], r: &[&str]) -> Result<(DensityOperator, DensityOperator)> {
    let both: Vec<&str> = a.iter().chain(r.iter()).copied().collect();
    let joint = state.partial_trace(&both)?;
    let id_a = HermitianOperator::identity(state.layout().select(a)?);
    let beta = if r.is_empty() {
        DensityOperator::from_psd(id_a)?
    } else {
        DensityOperator::from_psd(id_a.tensor(state.partial_trace(r)?.as_operator())?)?
    };
    Ok((joint, beta))
}

/// `I^eps_inf(X:E)` in bits.
pub fn max_mutual_information(state: &DensityOperator, x: &[&str], e: &[&str], eps: f64) -> Result<f64> {
    entropic(&EntropicKind::MutualInformation { x, e, order: RenyiOrder::Infinity }, state, SmoothingParam::new(eps)?)
}

/// `H^eps_min(A|R)` in bits.
pub fn cond_min_entropy(state: &DensityOperator, a: &[&str], r: &[&str], eps: f64) -> Result<f64> {
    entropic(&EntropicKind::ConditionalMinEntropy { a, r }, state, SmoothingParam::new(eps)?)
}

/// State-smoothed `||rho||^eps_inf` witness (spectrum clipped at the water level).
pub fn smoothed_inf_norm_witness(rho: &DensityOperator, eps: SmoothingParam) -> Result<DensityOperator> {
    let id = DensityOperator::from_psd(HermitianOperator::identity(rho.layout().clone()))?;
    Ok(smooth_renyi_div(rho, &id, RenyiOrder::Infinity, eps)?.witness)
}

/// Result of projector smoothing.
#[derive(Clone, Debug)]
pub struct ProjectorSmoothing {
    pub projector: HermitianOperator,
    /// Eigen-indices (ascending eigenvalue order of `rho`) that were skipped.
    pub bad: Vec<usize>,
    /// `Tr[Pi rho]`.
    pub captured: f64,
}

fn check_small_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidEpsilon(eps));
    }
    Ok(())
}

/// Projector commuting with `rho` that skips the eigendirections where `rho`
/// exceeds `(1 + 2 sqrt(eps))` times the diagonal of `rho_prime`, restricted
/// to the support of `rho`. Needs `||rho - rho'||_1 <= eps Tr rho`.
pub fn projector_smooth(rho: &DensityOperator, rho_prime: &DensityOperator, eps: f64) -> Result<ProjectorSmoothing> {
    check_small_eps(eps)?;
    check_pair(rho, rho_prime)?;
    let dist = trace_distance(rho, rho_prime.relabel(rho.layout().clone())?.as_operator())?;
    if dist > eps * rho.trace() + 1e-12 {
        return Err(Error::Precondition(format!("||rho - rho'||_1 = {dist} exceeds eps Tr rho")));
    }
    let e = rho.eigh();
    let factor = 1.0 + 2.0 * Float::sqrt(eps);
    let cut = KERNEL_CUTOFF * e.lambda_max();
    let mut bad = Vec::new();
    let mut keep = Vec::new();
    for k in 0..e.values.len() {
        let v = e.vector(k);
        let d = (v.adjoint() * rho_prime.matrix() * &v)[(0, 0)].re;
        if e.values[k] > factor * d {
            bad.push(k);
        } else if e.values[k] > cut && e.values[k] > 0.0 {
            keep.push(k);
        }
    }
    let n = rho.side();
    let mut p = CMatrix::zeros(n, n);
    for &k in &keep {
        let v = e.vector(k);
        p += &v * v.adjoint();
    }
    let projector = HermitianOperator::new(p, rho.layout().clone())?;
    let captured = keep.iter().map(|&k| e.values[k]).sum();
    Ok(ProjectorSmoothing { projector, bad, captured })
}

/// Truncation of `rho1` towards `rho2`: keeps the eigendirections of `rho1`
/// where `rho1 <= (1 + 2 sqrt(eps)) rho2` on the diagonal.
/// Needs `||rho1 - rho2||_1 <= eps` with `0 < eps < 1/4`.
pub fn truncate_toward(rho1: &DensityOperator, rho2: &DensityOperator, eps: f64) -> Result<DensityOperator> {
    check_small_eps(eps)?;
    check_pair(rho1, rho2)?;
    let dist = trace_distance(rho1, rho2.relabel(rho1.layout().clone())?.as_operator())?;
    if dist > eps + 1e-12 {
        return Err(Error::Precondition(format!("||rho1 - rho2||_1 = {dist} exceeds eps")));
    }
    let e = rho1.eigh();
    let factor = 1.0 + 2.0 * Float::sqrt(eps);
    let kept: Vec<f64> = (0..e.values.len())
        .map(|k| {
            let v = e.vector(k);
            let d = (v.adjoint() * rho2.matrix() * &v)[(0, 0)].re;
            if e.values[k] > factor * d {
                0.0
            } else {
                e.values[k].max(0.0)
            }
        })
        .collect();
    let mut m = CMatrix::zeros(rho1.side(), rho1.side());
    for (k, &w) in kept.iter().enumerate() {
        if w > 0.0 {
            let v = e.vector(k);
            m += (&v * v.adjoint()).scale(w);
        }
    }
    DensityOperator::from_psd(HermitianOperator::new(m, rho1.layout().clone())?)
}

/// Both sides of the shaved Cauchy-Schwarz inequality
/// `||r1 - r2||_1 <= sqrt(Tr Pi) ||r1 - r2||_2 + 2 Tr r1 sqrt(e1) + 2 Tr r2 sqrt(e2)`
/// with `e_i = 1 - Tr[Pi r_i] / Tr r_i`.
pub fn shaved_cs_check(rho1: &DensityOperator, rho2: &DensityOperator, pi: &HermitianOperator) -> Result<(f64, f64)> {
    check_pair(rho1, rho2)?;
    let r2 = rho2.relabel(rho1.layout().clone())?;
    let p = pi.relabel(rho1.layout().clone())?;
    let pe = p.eigh();
    if pe.lambda_min() < -1e-9 || pe.lambda_max() > 1.0 + 1e-9 {
        return Err(Error::Precondition("operator must satisfy 0 <= Pi <= 1".into()));
    }
    let diff = rho1.sub(&r2)?;
    let lhs = diff.schatten_norm(Schatten::One);
    let miss = |r: &HermitianOperator| -> f64 {
        let t = r.trace();
        if t <= 0.0 {
            0.0
        } else {
            (1.0 - p.trace_product(r).unwrap_or(t) / t).max(0.0)
        }
    };
    let rhs = Float::sqrt(p.trace().max(0.0)) * diff.schatten_norm(Schatten::Two)
        + 2.0 * rho1.trace() * Float::sqrt(miss(rho1))
        + 2.0 * r2.trace() * Float::sqrt(miss(&r2));
    Ok((lhs, rhs))
}

/// Classical-quantum helper: `I_inf(X:E)` computed blockwise as
/// `max_x D_inf(rho_x || rho^E)` over the support of `p`.
pub fn cq_max_mutual_information(p: &[f64], conditionals: &[DensityOperator]) -> Result<f64> {
    let layout: TensorLayout = conditionals[0].layout().clone();
    let mut avg = CMatrix::zeros(layout.side(), layout.side());
    for (w, r) in p.iter().zip(conditionals) {
        avg += r.matrix().scale(*w);
    }
    let avg = DensityOperator::from_psd(HermitianOperator::new(avg, layout)?)?;
    let mut best = f64::NEG_INFINITY;
    for (w, r) in p.iter().zip(conditionals) {
        if *w > 0.0 {
            best = best.max(renyi_div(r, &avg, RenyiOrder::Infinity)?);
        }
    }
    Ok(best)
}

/// Eigenvalues of `rho` in ascending order (convenience for reports).
pub fn spectrum(rho: &HermitianOperator) -> Vec<f64> {
    eigh(rho.matrix()).values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_density, random_probability};
    use crate::states::{CqState, ProbDist};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(dim: usize) -> TensorLayout {
        TensorLayout::single("A", dim).unwrap()
    }

    fn diag(v: &[f64]) -> DensityOperator {
        DensityOperator::diagonal(v, one(v.len())).unwrap()
    }

    fn eps(e: f64) -> SmoothingParam {
        SmoothingParam::new(e).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let a = diag(&[0.5, 0.5]);
        assert!(renyi_div(&a, &a, RenyiOrder::Infinity).unwrap().abs() < 1e-12);
        assert!(renyi_div(&a, &a, RenyiOrder::Two).unwrap().abs() < 1e-12);
        let pure = diag(&[1.0, 0.0]);
        assert!((renyi_div(&pure, &a, RenyiOrder::Infinity).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(renyi_div(&a, &pure, RenyiOrder::Infinity).unwrap(), f64::INFINITY);
        assert_eq!(renyi_div(&a, &pure, RenyiOrder::Two).unwrap(), f64::INFINITY);
    }

    #[test]
    fn smooth_example_from_truncation() {
        // alpha = diag(0.9, 0.1), beta = 1/2: clip 0.1 of mass off the top
        let a = diag(&[0.9, 0.1]);
        let b = diag(&[0.5, 0.5]);
        let s = smooth_renyi_div(&a, &b, RenyiOrder::Infinity, eps(0.1)).unwrap();
        assert!((s.value - Float::log2(1.6)).abs() < 1e-9);
        assert!(s.distance <= 0.1 + 1e-12);
        assert_eq!(s.method, SmoothingMethod::TruncationUpperBound);
    }

    #[test]
    fn smoothing_can_remove_small_out_of_support_mass() {
        let a = diag(&[0.95, 0.05]);
        let b = diag(&[1.0, 0.0]);
        let s = smooth_renyi_div(&a, &b, RenyiOrder::Infinity, eps(0.1)).unwrap();
        assert!(s.value.is_finite());
        assert!(s.distance <= 0.1 + 1e-12);
        let s2 = smooth_renyi_div(&a, &b, RenyiOrder::Infinity, eps(0.01)).unwrap();
        assert_eq!(s2.value, f64::INFINITY);
    }

    #[test]
    fn product_state_has_zero_mutual_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_density(2, 2, &mut rng).relabel(TensorLayout::single("X", 2).unwrap()).unwrap();
        let e = random_density(3, 3, &mut rng).relabel(TensorLayout::single("E", 3).unwrap()).unwrap();
        let s = x.tensor(&e).unwrap();
        let i = max_mutual_information(&s, &["X"], &["E"], 0.0).unwrap();
        assert!(i.abs() < 1e-9);
    }

    #[test]
    fn min_entropy_of_product_maximally_mixed() {
        let l = TensorLayout::new(&[("A", 2), ("B", 2)]).unwrap();
        let s = DensityOperator::maximally_mixed(l);
        assert!((cond_min_entropy(&s, &["A"], &["B"], 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_entropy_of_epr_is_minus_log_dim() {
        let phi = crate::states::epr_state(3, "B", "A").unwrap();
        let h = cond_min_entropy(&phi, &["A"], &["B"], 0.0).unwrap();
        assert!((h + Float::log2(3.0)).abs() < 1e-9);
    }

    #[test]
    fn projector_smooth_with_identical_states_is_support() {
        let rho = diag(&[0.5, 0.5, 0.0]);
        let p = projector_smooth(&rho, &rho, 0.1).unwrap();
        assert!((p.captured - 1.0).abs() < 1e-12);
        assert!((p.projector.trace() - 2.0).abs() < 1e-12);
        assert!(p.bad.is_empty());
        assert!(projector_smooth(&rho, &diag(&[0.0, 0.5, 0.5]), 0.1).is_err());
    }

    #[test]
    fn truncate_toward_identical_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_density(3, 3, &mut rng);
        let t = truncate_toward(&r, &r, 0.1).unwrap();
        assert!((t.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn cq_blockwise_mutual_information_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_probability(3, &mut rng);
        let el = TensorLayout::single("E", 2).unwrap();
        let c: Vec<DensityOperator> = (0..3).map(|_| random_density(2, 2, &mut rng).relabel(el.clone()).unwrap()).collect();
        let cq = CqState::new(TensorLayout::single("X", 3).unwrap(), ProbDist::new(p.clone()).unwrap(), c.clone()).unwrap();
        let dense = max_mutual_information(&cq.embed().unwrap(), &["X"], &["E"], 0.0).unwrap();
        let block = cq_max_mutual_information(&p, &c).unwrap();
        assert!((dense - block).abs() < 1e-9);
    }

    /// Brute-force optimum of D^eps_inf for commuting 2x2 inputs on a grid of
    /// feasible diagonal alpha'.
    fn grid_optimum(a: [f64; 2], b: [f64; 2], e: f64) -> f64 {
        let budget = e * (a[0] + a[1]);
        let n = 1000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            // remove r0 from the first coordinate and the rest from the second
            let r0 = budget * i as f64 / n as f64;
            let r1 = budget - r0;
            let x0 = (a[0] - r0).max(0.0);
            let x1 = (a[1] - r1).max(0.0);
            best = best.min(Float::log2((x0 / b[0]).max(x1 / b[1])));
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn two_le_inf_and_smoothing_monotone(seed in any::<u64>(), d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_density(d, d, &mut rng);
            let b = random_density(d, d, &mut rng);
            let d2 = renyi_div(&a, &b, RenyiOrder::Two).unwrap();
            let di = renyi_div(&a, &b, RenyiOrder::Infinity).unwrap();
            prop_assert!(d2 <= di + 1e-9);
            let mut last = di;
            for e in [0.01, 0.05, 0.1, 0.3] {
                let s = smooth_renyi_div(&a, &b, RenyiOrder::Infinity, eps(e)).unwrap();
                prop_assert!(s.value <= last + 1e-9);
                prop_assert!(s.distance <= e * a.trace() + 1e-10);
                prop_assert!(trace_distance(&a, &s.witness).unwrap() <= e * a.trace() + 1e-9);
                last = s.value;
                let s2 = smooth_renyi_div(&a, &b, RenyiOrder::Two, eps(e)).unwrap();
                prop_assert!(s2.value <= d2 + 1e-9);
            }
        }

        #[test]
        fn data_processing_under_partial_trace(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = TensorLayout::new(&[("A", 2), ("B", 2)]).unwrap();
            let a = random_density(4, 4, &mut rng).relabel(l.clone()).unwrap();
            let b = random_density(4, 4, &mut rng).relabel(l).unwrap();
            for order in [RenyiOrder::Two, RenyiOrder::Infinity] {
                let full = renyi_div(&a, &b, order).unwrap();
                let red = renyi_div(&a.partial_trace(&["A"]).unwrap(), &b.partial_trace(&["A"]).unwrap(), order).unwrap();
                prop_assert!(red <= full + 1e-9);
            }
        }

        #[test]
        fn commuting_truncation_is_grid_optimal(p in 0.01f64..0.99, q in 0.01f64..0.99, e in 0.01f64..0.3) {
            let a = [p, 1.0 - p];
            let b = [q, 1.0 - q];
            let s = smooth_renyi_div(&diag(&a), &diag(&b), RenyiOrder::Infinity, eps(e)).unwrap();
            let g = grid_optimum(a, b, e);
            prop_assert!(s.value <= g + 1e-9);
            prop_assert!(g - s.value <= 1e-3);
        }

        #[test]
        fn min_entropy_at_most_log_dim(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = TensorLayout::new(&[("A", 2), ("R", 3)]).unwrap();
            let s = random_density(6, 6, &mut rng).relabel(l).unwrap();
            let h = cond_min_entropy(&s, &["A"], &["R"], 0.0).unwrap();
            prop_assert!(h <= 1.0 + 1e-9);
            prop_assert!(h >= -1.0 - 1e-9);
        }

        #[test]
        fn projector_smoothing_guarantees(seed in any::<u64>(), d in 2usize..6, e in 0.01f64..0.24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(d, d, &mut rng);
            let w = smoothed_inf_norm_witness(&rho, eps(e)).unwrap();
            let p = projector_smooth(&rho, &w, e).unwrap();
            let pi = &p.projector;
            // commutes with rho
            let comm = pi.matrix() * rho.matrix() - rho.matrix() * pi.matrix();
            prop_assert!(comm.norm() < 1e-10);
            prop_assert!(p.captured >= (1.0 - e.sqrt()) * rho.trace() - 1e-12);
            let squeezed = rho.sandwich(pi.matrix()).unwrap();
            prop_assert!(squeezed.lambda_max() <= (1.0 + 2.0 * e.sqrt()) * w.lambda_max() + 1e-12);
        }

        #[test]
        fn truncation_guarantees(seed in any::<u64>(), d in 2usize..6, e in 0.01f64..0.24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = random_density(d, d, &mut rng);
            let other = random_density(d, d, &mut rng);
            // r2 = convex mix within distance eps of r1
            let lam = e / 2.0;
            let r2 = DensityOperator::from_psd(r1.scale(1.0 - lam).unwrap().add(&other.scale(lam).unwrap()).unwrap()).unwrap();
            let t = truncate_toward(&r1, &r2, e).unwrap();
            prop_assert!(r1.sub(&t).unwrap().lambda_min() > -1e-12);
            prop_assert!(trace_distance(&r1, &t).unwrap() < e.sqrt());
            let lhs = t.trace_product(&t).unwrap();
            let rhs = (1.0 + 2.0 * e.sqrt()) * r1.trace_product(&r2).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn shaved_cauchy_schwarz_holds(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = random_density(d, d, &mut rng);
            let r2 = random_density(d, 2, &mut rng);
            let p = random_density(d, 1, &mut rng).support_projector();
            let (lhs, rhs) = shaved_cs_check(&r1, &r2, &p).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
        }
    }
}
