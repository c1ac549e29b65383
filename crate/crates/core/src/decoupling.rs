//! Two-sender decoupling: completely positive maps and their Choi states, the
//! ancilla-qubit hat extension, the Haar Monte-Carlo of the decoupling error,
//! the twirl second-moment identity and the tilted trace-product bounds.
//!
//! An instance is a state whose first two factors are the senders `A1`, `A2`
//! (the twirled registers) and whose remaining factors form the reference
//! `R`, together with a map from `A1 A2` to an output layout `E`. Choi states
//! use `Phi` normalized by `1/|A|` and live on `[A1', A2', E]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::divergences::{conditional_pair, projector_smooth, smooth_renyi_div, RenyiOrder, SmoothingParam};
use crate::error::{Error, Result};
use crate::linalg::{
    identity, kron, real, trace_distance, CMatrix, DensityOperator, HermitianOperator, TensorLayout, KERNEL_CUTOFF,
    PSD_TOLERANCE,
};
use crate::mc::{trial_rng, McEstimate, TrialExecutor};
use crate::random::{haar_unitary, random_channel_kraus, random_state_on};
use crate::tilting::{embed_two_block, tilt_two_block};

/// Largest twirled register handled by the Monte-Carlo routines.
pub const PARTY_DIM_CAP: usize = 32;
/// Largest output and reference dimension handled by the Monte-Carlo routines.
pub const SIDE_CAP: usize = 16;
/// Slack on `sum K^dagger K <= trace_factor * I`.
pub const KRAUS_TOLERANCE: f64 = 1e-9;

/// Completely positive map given by Kraus operators `E <- A`.
#[derive(Clone, Debug)]
pub struct CPSuperoperator {
    kraus: Vec<CMatrix>,
    input: TensorLayout,
    output: TensorLayout,
    trace_factor: f64,
}

impl CPSuperoperator {
    /// Checks shapes and `sum K^dagger K <= trace_factor * I`.
    pub fn new(kraus: Vec<CMatrix>, input: TensorLayout, output: TensorLayout, trace_factor: f64) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::Precondition("a map needs at least one Kraus operator".into()));
        }
        for k in &kraus {
            if k.nrows() != output.side() {
                return Err(Error::DimensionMismatch { expected: output.side(), found: k.nrows() });
            }
            if k.ncols() != input.side() {
                return Err(Error::DimensionMismatch { expected: input.side(), found: k.ncols() });
            }
        }
        let top = kraus_sum_top(&kraus, &input)?;
        let excess = top - trace_factor;
        if excess > KRAUS_TOLERANCE * trace_factor.max(1.0) {
            return Err(Error::NotTraceNonIncreasing(excess));
        }
        Ok(Self { kraus, input, output, trace_factor })
    }

    /// Map whose trace factor is the largest eigenvalue of `sum K^dagger K`.
    pub fn from_kraus(kraus: Vec<CMatrix>, input: TensorLayout, output: TensorLayout) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::Precondition("a map needs at least one Kraus operator".into()));
        }
        let top = kraus_sum_top(&kraus, &input)?;
        Self::new(kraus, input, output, top)
    }

    /// Identity map onto a relabelled copy of the input.
    pub fn identity(input: TensorLayout, output: TensorLayout) -> Result<Self> {
        if input.side() != output.side() {
            return Err(Error::DimensionMismatch { expected: input.side(), found: output.side() });
        }
        let n = input.side();
        Self::new(alloc::vec![identity(n)], input, output, 1.0)
    }

    /// Full trace onto a one-dimensional output `E`.
    pub fn full_trace(input: TensorLayout) -> Result<Self> {
        let n = input.side();
        let kraus = (0..n).map(|i| CMatrix::from_fn(1, n, |_, j| real(if i == j { 1.0 } else { 0.0 }))).collect();
        Self::new(kraus, input, TensorLayout::single("E", 1)?, 1.0)
    }

    /// Random trace-preserving map from a Haar Stinespring isometry.
    pub fn random_channel<R: Rng + ?Sized>(input: TensorLayout, output: TensorLayout, env: usize, rng: &mut R) -> Result<Self> {
        let kraus = random_channel_kraus(input.side(), output.side(), env, rng);
        Self::new(kraus, input, output, 1.0)
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn input(&self) -> &TensorLayout {
        &self.input
    }

    pub fn output(&self) -> &TensorLayout {
        &self.output
    }

    pub fn trace_factor(&self) -> f64 {
        self.trace_factor
    }

    /// `sum_k K_k^dagger K_k`.
    pub fn kraus_sum(&self) -> CMatrix {
        let n = self.input.side();
        self.kraus.iter().fold(CMatrix::zeros(n, n), |acc, k| acc + k.adjoint() * k)
    }

    /// `(T (x) I)(op)` where the leading factors of `op` are the input
    /// layout; the result has layout `output ++ rest`.
    pub fn apply(&self, op: &HermitianOperator) -> Result<HermitianOperator> {
        self.apply_with(op, None)
    }

    /// Apply after a unitary `u` on the input: `T(u op u^dagger)`.
    fn apply_with(&self, op: &HermitianOperator, u: Option<&CMatrix>) -> Result<HermitianOperator> {
        let layout = op.layout();
        let k = self.input.len();
        if layout.len() < k || layout.labels()[..k] != *self.input.labels() || layout.dims()[..k] != *self.input.dims() {
            return Err(Error::LayoutMismatch(format!(
                "operator factors {:?} do not start with the map input {:?}",
                layout.labels(),
                self.input.labels()
            )));
        }
        let rest = TensorLayout::new(
            &layout.labels()[k..].iter().cloned().zip(layout.dims()[k..].iter().copied()).collect::<Vec<_>>(),
        )?;
        let id_rest = identity(rest.side());
        let out_layout = self.output.concat(&rest)?;
        let n = out_layout.side();
        let mut acc = CMatrix::zeros(n, n);
        for kr in &self.kraus {
            let kk = match u {
                Some(u) => kr * u,
                None => kr.clone(),
            };
            let big = kron(&kk, &id_rest);
            acc += &big * op.matrix() * big.adjoint();
        }
        HermitianOperator::new(crate::linalg::hermitian_part(&acc), out_layout)
    }
}

fn kraus_sum_top(kraus: &[CMatrix], input: &TensorLayout) -> Result<f64> {
    let n = input.side();
    let s = kraus.iter().fold(CMatrix::zeros(n, n), |acc, k| acc + k.adjoint() * k);
    Ok(HermitianOperator::new(crate::linalg::hermitian_part(&s), input.clone())?.lambda_max())
}

/// Label of the Choi copy of input factor `label`.
pub fn primed(label: &str) -> String {
    format!("{label}'")
}

fn primed_layout(input: &TensorLayout) -> Result<TensorLayout> {
    TensorLayout::new(&input.iter().map(|(l, d)| (primed(l), d)).collect::<Vec<_>>())
}

/// Choi state `(T (x) I)(Phi)` with `Phi` the normalized maximally entangled
/// state between the input and its primed copy, on `[input', output]`.
pub fn choi_state(t: &CPSuperoperator) -> Result<DensityOperator> {
    let d = t.input.side();
    let de = t.output.side();
    let layout = primed_layout(&t.input)?.concat(&t.output)?;
    let n = d * de;
    let mut m = CMatrix::zeros(n, n);
    let norm = 1.0 / d as f64;
    for k in &t.kraus {
        // (I (x) K)|Omega> has component (i, e) = K[e, i] / sqrt(d)
        let v = CMatrix::from_fn(n, 1, |r, _| k[(r % de, r / de)]);
        m += (&v * v.adjoint()).scale(norm);
    }
    DensityOperator::from_psd(HermitianOperator::new(m, layout)?)
}

/// Map whose Choi state is `tau` (layout `[input', output]` by side).
pub fn inverse_choi(tau: &HermitianOperator, input: &TensorLayout, output: &TensorLayout) -> Result<CPSuperoperator> {
    let d = input.side();
    let de = output.side();
    if tau.side() != d * de {
        return Err(Error::DimensionMismatch { expected: d * de, found: tau.side() });
    }
    let e = tau.eigh();
    let top = e.lambda_max().max(0.0);
    if e.lambda_min() < -(PSD_TOLERANCE * top + 1e-15) {
        return Err(Error::NotPsd(e.lambda_min()));
    }
    let cut = KERNEL_CUTOFF * top;
    let mut kraus = Vec::new();
    for k in 0..e.values.len() {
        let l = e.values[k];
        if l <= cut || l <= 0.0 {
            continue;
        }
        let v = e.vector(k);
        let s = Float::sqrt(d as f64 * l);
        kraus.push(CMatrix::from_fn(de, d, |o, i| v[i * de + o] * real(s)));
    }
    if kraus.is_empty() {
        kraus.push(CMatrix::zeros(de, d));
    }
    CPSuperoperator::from_kraus(kraus, input.clone(), output.clone())
}

/// State on `[A1, A2, R...]` with a map `A1 A2 -> E`.
#[derive(Clone, Debug)]
pub struct DecouplingInstance {
    pub rho: DensityOperator,
    pub channel: CPSuperoperator,
}

impl DecouplingInstance {
    pub fn new(rho: DensityOperator, channel: CPSuperoperator) -> Result<Self> {
        let layout = rho.layout();
        if layout.len() < 3 {
            return Err(Error::InvalidLayout("need two sender factors and a reference".into()));
        }
        let input = channel.input();
        if input.len() != 2 || input.labels() != &layout.labels()[..2] || input.dims() != &layout.dims()[..2] {
            return Err(Error::LayoutMismatch(format!(
                "map input {:?} must equal the sender factors {:?}",
                input.labels(),
                &layout.labels()[..2]
            )));
        }
        Ok(Self { rho, channel })
    }

    pub fn party_labels(&self) -> [&str; 2] {
        let l = self.rho.layout().labels();
        [l[0].as_str(), l[1].as_str()]
    }

    pub fn party_dims(&self) -> [usize; 2] {
        let d = self.rho.layout().dims();
        [d[0], d[1]]
    }

    pub fn reference_labels(&self) -> Vec<&str> {
        self.rho.layout().labels()[2..].iter().map(String::as_str).collect()
    }

    pub fn reference_dim(&self) -> usize {
        self.rho.layout().dims()[2..].iter().product()
    }

    /// `rho^R`.
    pub fn reference_state(&self) -> Result<DensityOperator> {
        self.rho.partial_trace(&self.reference_labels())
    }

    /// `tau^E = T(1 / (|A1||A2|))`.
    pub fn tau_e(&self) -> Result<HermitianOperator> {
        let mixed = DensityOperator::maximally_mixed(self.channel.input().clone());
        self.channel.apply(&mixed)
    }

    pub fn choi(&self) -> Result<DensityOperator> {
        choi_state(&self.channel)
    }

    fn check_caps(&self) -> Result<()> {
        let [d1, d2] = self.party_dims();
        if d1 > PARTY_DIM_CAP || d2 > PARTY_DIM_CAP {
            return Err(Error::CapExceeded(format!("sender dimensions {d1}, {d2} exceed {PARTY_DIM_CAP}")));
        }
        let de = self.channel.output().side();
        let dr = self.reference_dim();
        if de > SIDE_CAP || dr > SIDE_CAP {
            return Err(Error::CapExceeded(format!("|E| = {de} or |R| = {dr} exceeds {SIDE_CAP}")));
        }
        Ok(())
    }
}

/// `|i> -> |i>|0>` from `C^d` into `C^d (x) C^2`.
fn ancilla_zero(d: usize) -> CMatrix {
    let mut e = CMatrix::zeros(2 * d, d);
    for i in 0..d {
        e[(2 * i, i)] = real(1.0);
    }
    e
}

/// Layout with each sender factor doubled (ancilla qubit least significant).
fn doubled_layout(layout: &TensorLayout) -> Result<TensorLayout> {
    let factors: Vec<(String, usize)> =
        layout.iter().enumerate().map(|(k, (l, d))| (String::from(l), if k < 2 { 2 * d } else { d })).collect();
    TensorLayout::new(&factors)
}

/// Adds one ancilla qubit per sender: `rho (x) |0><0| (x) |0><0|` and the map
/// that projects both ancillas onto `|0>` and then applies `4 T`.
pub fn hat_extend(inst: &DecouplingInstance) -> Result<DecouplingInstance> {
    let [d1, d2] = inst.party_dims();
    let j = kron(&ancilla_zero(d1), &ancilla_zero(d2));
    let layout = doubled_layout(inst.rho.layout())?;
    let rho = inst.rho.sandwich_into(&kron(&j, &identity(inst.reference_dim())), layout.clone())?;
    let input = layout.select(&layout.labels()[..2])?;
    let jt = j.adjoint();
    let kraus = inst.channel.kraus().iter().map(|k| (k * &jt).scale(2.0)).collect();
    let channel = CPSuperoperator::new(kraus, input, inst.channel.output().clone(), 4.0 * inst.channel.trace_factor())?;
    DecouplingInstance::new(rho, channel)
}

/// `tau (x) |0><0| (x) |0><0|` on the doubled Choi layout.
pub fn hat_choi(tau: &DensityOperator, d1: usize, d2: usize) -> Result<DensityOperator> {
    let layout = doubled_layout(tau.layout())?;
    let de: usize = tau.layout().dims()[2..].iter().product();
    let j = kron(&kron(&ancilla_zero(d1), &ancilla_zero(d2)), &identity(de));
    tau.sandwich_into(&j, layout)
}

/// Theorem gate `18 eps^{1/128}`.
pub fn theorem_bound(eps: f64) -> f64 {
    18.0 * Float::powf(eps, 1.0 / 128.0)
}

/// Haar Monte-Carlo of `E ||T((U1 (x) U2 (x) 1) rho) - tau^E (x) rho^R||_1`.
pub fn decoupling_error_mc(inst: &DecouplingInstance, trials: usize, seed: u64, exec: &dyn TrialExecutor) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    inst.check_caps()?;
    let [d1, d2] = inst.party_dims();
    let target = inst.tau_e()?.tensor(inst.reference_state()?.as_operator())?;
    let rows = exec.run(trials, &|t| {
        let mut rng = trial_rng(seed, t);
        let u = kron(&haar_unitary(d1, &mut rng), &haar_unitary(d2, &mut rng));
        let sigma = inst.channel.apply_with(inst.rho.as_operator(), Some(&u))?;
        Ok(alloc::vec![trace_distance(&sigma, &target)?])
    })?;
    Ok(McEstimate::from_values(rows.into_iter().map(|r| r[0]).collect()))
}

/// Coefficient matrix of the twirl identity in the order `(0, 1, 2, 12)`:
/// `alpha = M t` with `M` the Kronecker product over senders of
/// `d / (d^2 - 1) [[d, -1], [-1, d]]`, `d` the twirled dimension.
pub fn twirl_coefficients(d1: usize, d2: usize) -> Result<[[f64; 4]; 4]> {
    if d1 < 2 || d2 < 2 {
        return Err(Error::Precondition(format!("twirl coefficients are singular for dimensions {d1}, {d2}")));
    }
    let k = |d: usize, a: usize, b: usize| {
        let d = d as f64;
        d / (d * d - 1.0) * if a == b { d } else { -1.0 }
    };
    let mut m = [[0.0; 4]; 4];
    for (s, row) in m.iter_mut().enumerate() {
        for (t, v) in row.iter_mut().enumerate() {
            *v = k(d1, s & 1, t & 1) * k(d2, s >> 1, t >> 1);
        }
    }
    Ok(m)
}

/// `Tr[x^S y^S]` for `S` in `(rest, p1 rest, p2 rest, p1 p2 rest)`.
fn marginal_products(x: &HermitianOperator, y: &HermitianOperator, rest: &[&str]) -> Result<[f64; 4]> {
    let l = x.layout().labels();
    let (p1, p2) = (l[0].as_str(), l[1].as_str());
    let y = y.relabel(x.layout().clone())?;
    let mut out = [0.0; 4];
    for (s, v) in out.iter_mut().enumerate() {
        let mut keep: Vec<&str> = Vec::new();
        if s & 1 == 1 {
            keep.push(p1);
        }
        if s & 2 == 2 {
            keep.push(p2);
        }
        keep.extend_from_slice(rest);
        *v = x.partial_trace(&keep)?.trace_product(&y.partial_trace(&keep)?)?;
    }
    Ok(out)
}

/// Both sides of the twirl identity.
#[derive(Clone, Debug)]
pub struct TwirlFormula {
    pub alpha: [f64; 4],
    /// `Tr[tau^S tau'^S]` over `(E, A1'E, A2'E, A1'A2'E)`.
    pub tau_products: [f64; 4],
    /// `Tr[rho^S rho'^S]` over `(R, A1R, A2R, A1A2R)`.
    pub rho_products: [f64; 4],
    pub value: f64,
}

fn check_twirl_pair(a: &DecouplingInstance, b: &DecouplingInstance) -> Result<()> {
    if a.rho.layout() != b.rho.layout() {
        return Err(Error::LayoutMismatch("twirl pair states differ in layout".into()));
    }
    if a.channel.output() != b.channel.output() {
        return Err(Error::LayoutMismatch("twirl pair maps differ in output".into()));
    }
    Ok(())
}

/// Closed form of `E_U Tr[T(U rho U^dagger) T'(U rho' U^dagger)]`.
pub fn twirl_formula(a: &DecouplingInstance, b: &DecouplingInstance) -> Result<TwirlFormula> {
    check_twirl_pair(a, b)?;
    let [d1, d2] = a.party_dims();
    let m = twirl_coefficients(d1, d2)?;
    let (ta, tb) = (a.choi()?, b.choi()?);
    let e_labels: Vec<&str> = ta.layout().labels()[2..].iter().map(String::as_str).collect();
    let tau_products = marginal_products(&ta, &tb, &e_labels)?;
    let rho_products = marginal_products(&a.rho, &b.rho, &a.reference_labels())?;
    let mut alpha = [0.0; 4];
    for (s, al) in alpha.iter_mut().enumerate() {
        *al = (0..4).map(|t| m[s][t] * tau_products[t]).sum();
    }
    let value = (0..4).map(|s| alpha[s] * rho_products[s]).sum();
    Ok(TwirlFormula { alpha, tau_products, rho_products, value })
}

/// Monte-Carlo side of the twirl identity against its closed form.
#[derive(Clone, Debug)]
pub struct TwirlCheck {
    pub mc: McEstimate,
    pub formula: TwirlFormula,
    /// `|mc - formula|` in standard errors.
    pub sigmas: f64,
}

pub fn twirl_moment_check(
    a: &DecouplingInstance,
    b: &DecouplingInstance,
    trials: usize,
    seed: u64,
    exec: &dyn TrialExecutor,
) -> Result<TwirlCheck> {
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    check_twirl_pair(a, b)?;
    a.check_caps()?;
    let formula = twirl_formula(a, b)?;
    let [d1, d2] = a.party_dims();
    let rows = exec.run(trials, &|t| {
        let mut rng = trial_rng(seed, t);
        let u = kron(&haar_unitary(d1, &mut rng), &haar_unitary(d2, &mut rng));
        let sa = a.channel.apply_with(a.rho.as_operator(), Some(&u))?;
        let sb = b.channel.apply_with(b.rho.as_operator(), Some(&u))?;
        Ok(alloc::vec![sa.trace_product(&sb)?])
    })?;
    let mc = McEstimate::from_values(rows.into_iter().map(|r| r[0]).collect());
    let diff = (mc.mean - formula.value).abs();
    let sigmas = if mc.stderr > 0.0 {
        diff / mc.stderr
    } else if diff <= 1e-12 * formula.value.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(TwirlCheck { mc, formula, sigmas })
}

/// One hypothesis of the decoupling theorem.
#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingConstraint {
    pub name: String,
    pub lhs: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// The five hypotheses: three entropy sums above `log 1/eps` and
/// `|A_i|^2 > 1/eps`.
pub fn decoupling_condition_check(inst: &DecouplingInstance, eps: f64) -> Result<Vec<DecouplingConstraint>> {
    let param = SmoothingParam::new(eps)?;
    let [a1, a2] = inst.party_labels();
    let r = inst.reference_labels();
    let tau = inst.choi()?;
    let (p1, p2) = (primed(a1), primed(a2));
    let e: Vec<&str> = tau.layout().labels()[2..].iter().map(String::as_str).collect();
    let hmin = |state: &DensityOperator, a: &[&str], r: &[&str]| -> Result<f64> {
        let (alpha, beta) = conditional_pair(state, a, r)?;
        Ok(-smooth_renyi_div(&alpha, &beta, RenyiOrder::Infinity, param)?.value)
    };
    let log_inv = Float::log2(1.0 / eps);
    let mut out = Vec::new();
    for (a, ap, name) in [
        (alloc::vec![a1], alloc::vec![p1.as_str()], format!("H({a1}|R)+H({p1}|E)")),
        (alloc::vec![a2], alloc::vec![p2.as_str()], format!("H({a2}|R)+H({p2}|E)")),
        (alloc::vec![a1, a2], alloc::vec![p1.as_str(), p2.as_str()], format!("H({a1}{a2}|R)+H({p1}{p2}|E)")),
    ] {
        let lhs = hmin(&inst.rho, &a, &r)? + hmin(&tau, &ap, &e)?;
        out.push(DecouplingConstraint { name, lhs, threshold: log_inv, pass: lhs > log_inv });
    }
    for (label, d) in [(a1, inst.party_dims()[0]), (a2, inst.party_dims()[1])] {
        let lhs = (d * d) as f64;
        out.push(DecouplingConstraint { name: format!("|{label}|^2"), lhs, threshold: 1.0 / eps, pass: lhs > 1.0 / eps });
    }
    Ok(out)
}

/// Rescale the reference so that `rho^R` is maximally mixed (needs a
/// full-rank reference marginal).
pub fn flatten_reference(rho: &DensityOperator) -> Result<DensityOperator> {
    let layout = rho.layout();
    let rest: Vec<&str> = layout.labels()[2..].iter().map(String::as_str).collect();
    let rr = rho.partial_trace(&rest)?;
    if rr.lambda_min() <= KERNEL_CUTOFF * rr.lambda_max() {
        return Err(Error::Precondition("reference marginal is not full rank".into()));
    }
    let dr = rr.side() as f64;
    let m = rr.pseudo_power(-0.5).scale(1.0 / Float::sqrt(dr));
    let da = layout.dims()[0] * layout.dims()[1];
    let out = rho.sandwich(&kron(&identity(da), m.matrix()))?;
    out.normalized()
}

/// Post-process the output so that `tau^E` is proportional to the identity,
/// scaled down just enough to stay trace non-increasing.
pub fn flatten_output(t: &CPSuperoperator) -> Result<CPSuperoperator> {
    let mixed = DensityOperator::maximally_mixed(t.input().clone());
    let te = t.apply(&mixed)?;
    if te.lambda_min() <= KERNEL_CUTOFF * te.lambda_max() {
        return Err(Error::Precondition("output marginal is not full rank".into()));
    }
    let de = te.side() as f64;
    let m = te.pseudo_power(-0.5).scale(1.0 / Float::sqrt(de));
    let kraus: Vec<CMatrix> = t.kraus().iter().map(|k| m.matrix() * k).collect();
    let top = kraus_sum_top(&kraus, t.input())?;
    let s = 1.0 / Float::sqrt(top.max(1.0));
    let kraus = kraus.into_iter().map(|k| k.scale(s)).collect();
    CPSuperoperator::new(kraus, t.input().clone(), t.output().clone(), 1.0)
}

/// Random instance with maximally mixed `rho^R` and `tau^E`.
pub fn random_flat_instance<R: Rng + ?Sized>(
    dims: [usize; 2],
    dr: usize,
    de: usize,
    rank: usize,
    env: usize,
    rng: &mut R,
) -> Result<DecouplingInstance> {
    let layout = TensorLayout::new(&[("A1", dims[0]), ("A2", dims[1]), ("R", dr)])?;
    let rho = flatten_reference(&random_state_on(&layout, rank, rng))?;
    let input = layout.select(&["A1", "A2"])?;
    let t = CPSuperoperator::random_channel(input, TensorLayout::single("E", de)?, env, rng)?;
    DecouplingInstance::new(rho, flatten_output(&t)?)
}

/// Tilted states of the two-sender smoothing construction: `hat` is the
/// two-block tilt of the state, `hathat` the untilted embedding cut down by
/// `1 - span` of the tilted complements of the smoothing projectors.
#[derive(Clone, Debug)]
pub struct TiltedSide {
    pub hat: DensityOperator,
    pub hathat: DensityOperator,
    /// Smoothed conditional min-entropies for `(A1, A2, A1A2)`.
    pub hmin: [f64; 3],
    /// Rank of the flat marginal on the conditioning system.
    pub flat_rank: usize,
    pub trace: f64,
}

fn flat_rank(m: &HermitianOperator, trace: f64, eps: f64) -> Result<usize> {
    let vals = m.eigenvalues();
    let top = vals.iter().copied().fold(0.0, f64::max);
    let support: Vec<f64> = vals.into_iter().filter(|&v| v > 1e-9 * top).collect();
    let rank = support.len();
    let hi = support.iter().copied().fold(0.0, f64::max) * rank as f64;
    let lo = support.iter().copied().fold(f64::INFINITY, f64::min) * rank as f64;
    let s = Float::sqrt(eps);
    if hi > (1.0 + s) * trace * (1.0 + 1e-9) || lo < (1.0 - s) * trace * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!("conditioning marginal is not flat (rank {rank}, spread {lo}..{hi})")));
    }
    Ok(rank)
}

/// Build `hat`/`hathat` for a state on `[P1, P2, rest...]`.
pub fn tilted_side(state: &DensityOperator, eps: f64) -> Result<TiltedSide> {
    let param = SmoothingParam::new(eps)?;
    let layout = state.layout().clone();
    let (p1, p2) = (layout.labels()[0].clone(), layout.labels()[1].clone());
    let rest: Vec<&str> = layout.labels()[2..].iter().map(String::as_str).collect();
    let trace = state.trace();
    let fr = flat_rank(state.partial_trace(&rest)?.as_operator(), trace, eps)?;
    let (h1, h2) = (format!("{p1}^"), format!("{p2}^"));

    let mut hmin = [0.0; 3];
    let mut complement: Option<HermitianOperator> = None;
    let full = {
        let a = layout.replace_factor(&p1, &[(p1.as_str(), layout.dims()[0]), (h1.as_str(), 2)])?;
        a.replace_factor(&p2, &[(p2.as_str(), layout.dims()[1]), (h2.as_str(), 2)])?
    };
    for (k, parties) in [alloc::vec![p1.as_str()], alloc::vec![p2.as_str()], alloc::vec![p1.as_str(), p2.as_str()]]
        .into_iter()
        .enumerate()
    {
        let (alpha, beta) = conditional_pair(state, &parties, &rest)?;
        let sd = smooth_renyi_div(&alpha, &beta, RenyiOrder::Infinity, param)?;
        hmin[k] = -sd.value;
        let ps = projector_smooth(&alpha, &sd.witness, eps)?;
        let mut c = HermitianOperator::identity(alpha.layout().clone()).sub(&ps.projector)?;
        for (p, h) in [(&p1, &h1), (&p2, &h2)] {
            if parties.contains(&p.as_str()) {
                c = tilt_two_block(eps, &c, p, h)?;
            }
        }
        let c = c.embed(&full)?;
        complement = Some(match complement {
            Some(acc) => acc.add(&c)?,
            None => c,
        });
    }
    let span = complement.expect("three complements").support_projector();
    let keep = HermitianOperator::identity(full.clone()).sub(&span)?;

    let emb = embed_two_block(&embed_two_block(state, &p1, &h1)?, &p2, &h2)?;
    let tilted = tilt_two_block(eps, &tilt_two_block(eps, state, &p1, &h1)?, &p2, &h2)?;
    let merged = doubled_layout(&layout)?;
    let hat = DensityOperator::from_psd(tilted.relabel(merged.clone())?)?;
    let hathat = DensityOperator::from_psd(emb.sandwich(keep.matrix())?.relabel(merged)?)?;
    Ok(TiltedSide { hat, hathat, hmin, flat_rank: fr, trace })
}

/// One of the eight trace-product bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceProductBound {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// The tilted construction for both the state and the Choi state.
#[derive(Clone, Debug)]
pub struct TiltedConstruction {
    pub rho: TiltedSide,
    pub tau: TiltedSide,
    pub eps: f64,
}

impl TiltedConstruction {
    pub fn new(inst: &DecouplingInstance, eps: f64) -> Result<Self> {
        Ok(Self { rho: tilted_side(&inst.rho, eps)?, tau: tilted_side(&inst.choi()?, eps)?, eps })
    }

    /// `(hat state, map of hat Choi)` and `(hathat state, map of hathat Choi)`
    /// as instances on the doubled senders.
    pub fn instances(&self, output: &TensorLayout) -> Result<(DecouplingInstance, DecouplingInstance)> {
        let layout = self.rho.hat.layout();
        let input = layout.select(&layout.labels()[..2])?;
        let t_hat = inverse_choi(&self.tau.hat, &input, output)?;
        let t_hathat = inverse_choi(&self.tau.hathat, &input, output)?;
        Ok((
            DecouplingInstance::new(self.rho.hat.clone(), t_hat)?,
            DecouplingInstance::new(self.rho.hathat.clone(), t_hathat)?,
        ))
    }

    /// Each trace product `Tr[x-hat^S x-hathat^S]` next to its bound.
    pub fn trace_product_bounds(&self) -> Result<Vec<TraceProductBound>> {
        let s = Float::sqrt(self.eps);
        let mut out = Vec::new();
        for (name, side) in [("rho", &self.rho), ("tau", &self.tau)] {
            let rest: Vec<&str> = side.hat.layout().labels()[2..].iter().map(String::as_str).collect();
            let prods = marginal_products(&side.hat, &side.hathat, &rest)?;
            let scale = side.trace * side.trace / side.flat_rank as f64;
            let l = side.hat.layout().labels();
            let subsets = ["", l[0].as_str(), l[1].as_str(), ""];
            for (k, v) in prods.iter().enumerate() {
                let (label, bound) = match k {
                    0 => (String::from("-"), (1.0 + s) * scale),
                    3 => (format!("{}{}", l[0], l[1]), (1.0 + 3.0 * s) * scale * Float::powf(2.0, -side.hmin[2])),
                    _ => (String::from(subsets[k]), (1.0 + 3.0 * s) * scale * Float::powf(2.0, -side.hmin[k - 1])),
                };
                out.push(TraceProductBound {
                    name: format!("{name}[{label}]"),
                    value: *v,
                    bound,
                    pass: *v <= bound * (1.0 + 1e-9) + 1e-12,
                });
            }
        }
        Ok(out)
    }
}
