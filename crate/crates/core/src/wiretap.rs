//! CMG covering and the privacy side of the wiretap interference channel.
//!
//! Classical alphabets are `X'`, `X`, `Y'`, `Y` with an optional
//! timesharing variable `Q`; Eve's output depends on `(x, y)` only.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::divergences::max_mutual_information;
use crate::error::{Error, Result};
use crate::linalg::{trace_distance, CMatrix, DensityOperator, HermitianOperator, TensorLayout};
use crate::mc::{trial_rng, McEstimate, TrialExecutor};
use crate::states::{CqState, ProbDist};

/// Largest number of message pairs averaged exactly per codebook.
pub const MESSAGE_PAIR_CAP: usize = 4096;
/// Largest number of codebook symbols per party.
pub const CODEBOOK_SYMBOL_CAP: usize = 1 << 22;

/// `p(q) p(x', x | q) p(y', y | q)`; joint tables are row-major
/// (`x' * |X| + x`).
#[derive(Clone, Debug)]
pub struct ControlDistribution {
    pub q: ProbDist,
    pub alice: Vec<ProbDist>,
    pub bob: Vec<ProbDist>,
    pub dims: [usize; 4],
}

impl ControlDistribution {
    pub fn new(q: ProbDist, alice: Vec<ProbDist>, bob: Vec<ProbDist>, dims: [usize; 4]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidLayout("alphabet sizes must be positive".into()));
        }
        if alice.len() != q.len() || bob.len() != q.len() {
            return Err(Error::AlphabetMismatch("one conditional table per timesharing symbol".into()));
        }
        for a in &alice {
            if a.len() != dims[0] * dims[1] {
                return Err(Error::AlphabetMismatch(format!("Alice table has {} entries", a.len())));
            }
        }
        for b in &bob {
            if b.len() != dims[2] * dims[3] {
                return Err(Error::AlphabetMismatch(format!("Bob table has {} entries", b.len())));
            }
        }
        for d in core::iter::once(&q).chain(&alice).chain(&bob) {
            if (d.total() - 1.0).abs() > crate::states::MASS_TOLERANCE {
                return Err(Error::InvalidDistribution("control distributions must be normalized".into()));
            }
        }
        Ok(Self { q, alice, bob, dims })
    }

    /// No timesharing.
    pub fn single(alice: ProbDist, bob: ProbDist, dims: [usize; 4]) -> Result<Self> {
        Self::new(ProbDist::normalized(alloc::vec![1.0])?, alloc::vec![alice], alloc::vec![bob], dims)
    }

    fn marginal_outer(table: &ProbDist, outer: usize, inner: usize) -> Vec<f64> {
        (0..outer).map(|a| (0..inner).map(|b| table.weights()[a * inner + b]).sum()).collect()
    }

    fn marginal_inner(table: &ProbDist, outer: usize, inner: usize) -> Vec<f64> {
        (0..inner).map(|b| (0..outer).map(|a| table.weights()[a * inner + b]).sum()).collect()
    }

    /// `p(x | q)` for Alice and `p(y | q)` for Bob.
    pub fn input_marginals(&self, q: usize) -> (Vec<f64>, Vec<f64>) {
        (
            Self::marginal_inner(&self.alice[q], self.dims[0], self.dims[1]),
            Self::marginal_inner(&self.bob[q], self.dims[2], self.dims[3]),
        )
    }
}

/// Eve's cq channel `(x, y) -> sigma_xy`, indexed `x * |Y| + y`.
#[derive(Clone, Debug)]
pub struct CqChannelE {
    outputs: Vec<DensityOperator>,
    nx: usize,
    ny: usize,
}

impl CqChannelE {
    pub fn new(outputs: Vec<DensityOperator>, nx: usize, ny: usize) -> Result<Self> {
        if outputs.len() != nx * ny || outputs.is_empty() {
            return Err(Error::AlphabetMismatch(format!("{} outputs for {nx} x {ny} inputs", outputs.len())));
        }
        let l = outputs[0].layout().clone();
        if outputs.iter().any(|o| o.layout() != &l) {
            return Err(Error::LayoutMismatch("channel outputs live on different layouts".into()));
        }
        Ok(Self { outputs, nx, ny })
    }

    pub fn constant(sigma: DensityOperator, nx: usize, ny: usize) -> Result<Self> {
        Self::new(alloc::vec![sigma; nx * ny], nx, ny)
    }

    pub fn output(&self, x: usize, y: usize) -> &DensityOperator {
        &self.outputs[x * self.ny + y]
    }

    pub fn layout(&self) -> &TensorLayout {
        self.outputs[0].layout()
    }

    fn check(&self, cd: &ControlDistribution) -> Result<()> {
        if self.nx != cd.dims[1] || self.ny != cd.dims[3] {
            return Err(Error::AlphabetMismatch(format!(
                "channel inputs {}x{} vs control alphabets {}x{}",
                self.nx, self.ny, cd.dims[1], cd.dims[3]
            )));
        }
        Ok(())
    }

    /// `sigma^E_q = sum p(x|q) p(y|q) sigma_xy`.
    pub fn average(&self, cd: &ControlDistribution, q: usize) -> Result<DensityOperator> {
        self.check(cd)?;
        let (px, py) = cd.input_marginals(q);
        self.weighted(&px, &py, 1.0)
    }

    fn weighted(&self, wx: &[f64], wy: &[f64], norm: f64) -> Result<DensityOperator> {
        let side = self.layout().side();
        let mut m = CMatrix::zeros(side, side);
        for x in 0..self.nx {
            if wx[x] == 0.0 {
                continue;
            }
            for y in 0..self.ny {
                if wy[y] != 0.0 {
                    m += self.output(x, y).matrix().scale(wx[x] * wy[y] / norm);
                }
            }
        }
        DensityOperator::from_psd(HermitianOperator::new(m, self.layout().clone())?)
    }
}

/// Control cq state on `X' X Y' Y` (labels as given) with Eve's conditionals.
pub fn control_state(cd: &ControlDistribution, ch: &CqChannelE, q: usize) -> Result<CqState> {
    ch.check(cd)?;
    if q >= cd.q.len() {
        return Err(Error::Precondition(format!("timesharing symbol {q} out of range")));
    }
    let [nxp, nx, nyp, ny] = cd.dims;
    let layout = TensorLayout::new(&[("Xp", nxp), ("X", nx), ("Yp", nyp), ("Y", ny)])?;
    let a = cd.alice[q].weights();
    let b = cd.bob[q].weights();
    let mut weights = Vec::with_capacity(layout.side());
    let mut conds = Vec::with_capacity(layout.side());
    for xp in 0..nxp {
        for x in 0..nx {
            for yp in 0..nyp {
                for y in 0..ny {
                    weights.push(a[xp * nx + x] * b[yp * ny + y]);
                    conds.push(ch.output(x, y).clone());
                }
            }
        }
    }
    CqState::new(layout, ProbDist::new(weights)?, conds)
}

/// Obfuscation sizes `L', L, M', M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CmgSizes {
    pub l_prime: usize,
    pub l: usize,
    pub m_prime: usize,
    pub m: usize,
}

impl CmgSizes {
    pub fn new(l_prime: usize, l: usize, m_prime: usize, m: usize) -> Result<Self> {
        if l_prime == 0 || l == 0 || m_prime == 0 || m == 0 {
            return Err(Error::Precondition("obfuscation sizes must be at least 1".into()));
        }
        Ok(Self { l_prime, l, m_prime, m })
    }

    pub fn doubled(self) -> Self {
        Self { l_prime: 2 * self.l_prime, l: 2 * self.l, m_prime: 2 * self.m_prime, m: 2 * self.m }
    }
}

/// Denominator of the CMG sample average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `L' L M' M`, the uniform average.
    Uniform,
    /// `L' (L + 1) M' (M + 1)`, as printed in the CMG definition.
    AsPrinted,
}

impl Normalization {
    fn denominator(self, s: &CmgSizes) -> f64 {
        match self {
            Normalization::Uniform => (s.l_prime * s.l * s.m_prime * s.m) as f64,
            Normalization::AsPrinted => (s.l_prime * (s.l + 1) * s.m_prime * (s.m + 1)) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Normalization::Uniform => "uniform",
            Normalization::AsPrinted => "as-printed",
        }
    }
}

/// Inner-layer sampler: iid, or with probability `eta` a whole row
/// repeats one draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerSampler {
    Iid,
    Sticky(f64),
}

impl InnerSampler {
    fn eta(self) -> f64 {
        match self {
            InnerSampler::Iid => 0.0,
            InnerSampler::Sticky(e) => e,
        }
    }
}

/// Message-set sizes `2^{R'_i}` and `2^{R_i - R'_i}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSplit {
    pub r1: f64,
    pub r1_prime: f64,
    pub r2: f64,
    pub r2_prime: f64,
}

fn message_count(bits: f64) -> Result<usize> {
    if !(bits >= 0.0) || bits > 40.0 {
        return Err(Error::Precondition(format!("rate {bits} outside [0, 40] bits")));
    }
    let n = Float::powf(2.0, bits);
    let r = Float::round(n);
    if (n - r).abs() > 1e-9 * r {
        return Err(Error::Precondition(format!("2^{bits} is not an integer message count")));
    }
    Ok(r as usize)
}

impl RateSplit {
    pub fn new(r1: f64, r1_prime: f64, r2: f64, r2_prime: f64) -> Result<Self> {
        if !(0.0 <= r1_prime && r1_prime <= r1 && 0.0 <= r2_prime && r2_prime <= r2) {
            return Err(Error::Precondition("rates must satisfy 0 <= R'_i <= R_i".into()));
        }
        Ok(Self { r1, r1_prime, r2, r2_prime })
    }

    pub fn zero() -> Self {
        Self { r1: 0.0, r1_prime: 0.0, r2: 0.0, r2_prime: 0.0 }
    }

    /// `(|M'_1|, |M''_1|, |M'_2|, |M''_2|)`.
    pub fn counts(&self) -> Result<[usize; 4]> {
        Ok([
            message_count(self.r1_prime)?,
            message_count(self.r1 - self.r1_prime)?,
            message_count(self.r2_prime)?,
            message_count(self.r2 - self.r2_prime)?,
        ])
    }
}

/// One party's layered codebook: `outer[m'][l']` and
/// `inner[m'][l'][m''][l]`, flattened.
#[derive(Clone, Debug)]
pub struct PartyCodebook {
    pub n_outer_msg: usize,
    pub n_inner_msg: usize,
    pub outer_size: usize,
    pub inner_size: usize,
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
}

impl PartyCodebook {
    fn generate<R: Rng + ?Sized>(
        table: &ProbDist,
        dims: (usize, usize),
        counts: (usize, usize),
        sizes: (usize, usize),
        sampler: InnerSampler,
        rng: &mut R,
    ) -> Result<Self> {
        let (nouter, ninner) = dims;
        let (n_outer_msg, n_inner_msg) = counts;
        let (outer_size, inner_size) = sizes;
        let total = n_outer_msg
            .checked_mul(outer_size)
            .and_then(|v| v.checked_mul(n_inner_msg))
            .and_then(|v| v.checked_mul(inner_size))
            .ok_or_else(|| Error::CapExceeded("codebook size overflows".into()))?;
        if total > CODEBOOK_SYMBOL_CAP {
            return Err(Error::CapExceeded(format!("{total} codebook symbols")));
        }
        let outer_p = ControlDistribution::marginal_outer(table, nouter, ninner);
        let outer_dist = WeightedIndex::new(&outer_p).map_err(|e| Error::InvalidDistribution(format!("{e}")))?;
        let cond: Vec<Option<WeightedIndex<f64>>> = (0..nouter)
            .map(|a| {
                if outer_p[a] > 0.0 {
                    WeightedIndex::new(&table.weights()[a * ninner..(a + 1) * ninner]).ok()
                } else {
                    None
                }
            })
            .collect();
        let eta = sampler.eta();
        let row = n_inner_msg * inner_size;
        let mut outer = Vec::with_capacity(n_outer_msg * outer_size);
        let mut inner = Vec::with_capacity(total);
        for _ in 0..n_outer_msg * outer_size {
            let xp = outer_dist.sample(rng);
            outer.push(xp);
            let d = cond[xp].as_ref().ok_or_else(|| Error::InvalidDistribution("empty conditional row".into()))?;
            if eta > 0.0 && rng.random::<f64>() < eta {
                let z = d.sample(rng);
                inner.extend(core::iter::repeat_n(z, row));
            } else {
                inner.extend((0..row).map(|_| d.sample(rng)));
            }
        }
        Ok(Self { n_outer_msg, n_inner_msg, outer_size, inner_size, outer, inner })
    }

    /// Symbol counts over all `(l', l)` for message `(m', m'')`.
    fn counts(&self, m_outer: usize, m_inner: usize, alphabet: usize) -> Vec<f64> {
        let mut c = alloc::vec![0.0; alphabet];
        let row = self.n_inner_msg * self.inner_size;
        for lp in 0..self.outer_size {
            let base = (m_outer * self.outer_size + lp) * row + m_inner * self.inner_size;
            for &x in &self.inner[base..base + self.inner_size] {
                c[x] += 1.0;
            }
        }
        c
    }

    /// Same codebook with messages relabelled: `perm_outer[m']`, `perm_inner[m'']`.
    pub fn relabel(&self, perm_outer: &[usize], perm_inner: &[usize]) -> Self {
        let row = self.n_inner_msg * self.inner_size;
        let mut outer = self.outer.clone();
        let mut inner = self.inner.clone();
        for (m, &pm) in perm_outer.iter().enumerate() {
            for lp in 0..self.outer_size {
                outer[pm * self.outer_size + lp] = self.outer[m * self.outer_size + lp];
                for (mi, &pmi) in perm_inner.iter().enumerate() {
                    let src = (m * self.outer_size + lp) * row + mi * self.inner_size;
                    let dst = (pm * self.outer_size + lp) * row + pmi * self.inner_size;
                    inner[dst..dst + self.inner_size].copy_from_slice(&self.inner[src..src + self.inner_size]);
                }
            }
        }
        Self { outer, inner, ..*self }
    }
}

/// Rate-split codebook for a sampled timesharing symbol.
#[derive(Clone, Debug)]
pub struct WiretapCodebook {
    pub q: usize,
    pub alice: PartyCodebook,
    pub bob: PartyCodebook,
}

impl WiretapCodebook {
    pub fn generate<R: Rng + ?Sized>(
        cd: &ControlDistribution,
        counts: [usize; 4],
        sizes: CmgSizes,
        samplers: (InnerSampler, InnerSampler),
        rng: &mut R,
    ) -> Result<Self> {
        let qd = WeightedIndex::new(cd.q.weights()).map_err(|e| Error::InvalidDistribution(format!("{e}")))?;
        let q = qd.sample(rng);
        let alice = PartyCodebook::generate(
            &cd.alice[q],
            (cd.dims[0], cd.dims[1]),
            (counts[0], counts[1]),
            (sizes.l_prime, sizes.l),
            samplers.0,
            rng,
        )?;
        let bob = PartyCodebook::generate(
            &cd.bob[q],
            (cd.dims[2], cd.dims[3]),
            (counts[2], counts[3]),
            (sizes.m_prime, sizes.m),
            samplers.1,
            rng,
        )?;
        Ok(Self { q, alice, bob })
    }

    pub fn message_pairs(&self) -> usize {
        self.alice.n_outer_msg * self.alice.n_inner_msg * self.bob.n_outer_msg * self.bob.n_inner_msg
    }

    /// Eve's state for message pair `((m1', m1''), (m2', m2''))`.
    pub fn eve_state(&self, ch: &CqChannelE, m1: (usize, usize), m2: (usize, usize), norm: f64) -> Result<DensityOperator> {
        let cx = self.alice.counts(m1.0, m1.1, ch.nx);
        let cy = self.bob.counts(m2.0, m2.1, ch.ny);
        ch.weighted(&cx, &cy, norm)
    }

    /// Mean of `||sigma^E_{m1 m2} - sigma^E_q||_1` over all message pairs.
    pub fn privacy_error(&self, cd: &ControlDistribution, ch: &CqChannelE, norm: Normalization) -> Result<f64> {
        if self.message_pairs() > MESSAGE_PAIR_CAP {
            return Err(Error::CapExceeded(format!("{} message pairs", self.message_pairs())));
        }
        let target = ch.average(cd, self.q)?;
        let sizes = CmgSizes {
            l_prime: self.alice.outer_size,
            l: self.alice.inner_size,
            m_prime: self.bob.outer_size,
            m: self.bob.inner_size,
        };
        let denom = norm.denominator(&sizes);
        // Alice's and Bob's count vectors are shared across pairs
        let ax: Vec<Vec<f64>> = (0..self.alice.n_outer_msg)
            .flat_map(|a| (0..self.alice.n_inner_msg).map(move |b| (a, b)))
            .map(|(a, b)| self.alice.counts(a, b, ch.nx))
            .collect();
        let by: Vec<Vec<f64>> = (0..self.bob.n_outer_msg)
            .flat_map(|a| (0..self.bob.n_inner_msg).map(move |b| (a, b)))
            .map(|(a, b)| self.bob.counts(a, b, ch.ny))
            .collect();
        let mut vals = Vec::with_capacity(ax.len() * by.len());
        for cx in &ax {
            for cy in &by {
                let s = ch.weighted(cx, cy, denom)?;
                vals.push(trace_distance(&s, &target)?);
            }
        }
        Ok(crate::mc::pairwise_sum(&vals) / vals.len() as f64)
    }
}

fn run_codebook_mc(
    cd: &ControlDistribution,
    ch: &CqChannelE,
    counts: [usize; 4],
    sizes: CmgSizes,
    samplers: (InnerSampler, InnerSampler),
    norm: Normalization,
    trials: usize,
    seed: u64,
    exec: &dyn TrialExecutor,
) -> Result<McEstimate> {
    ch.check(cd)?;
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let pairs = counts.iter().product::<usize>();
    if pairs > MESSAGE_PAIR_CAP {
        return Err(Error::CapExceeded(format!("{pairs} message pairs")));
    }
    let rows = exec.run(trials, &|t| {
        let mut rng = trial_rng(seed, t);
        let book = WiretapCodebook::generate(cd, counts, sizes, samplers, &mut rng)?;
        Ok(alloc::vec![book.privacy_error(cd, ch, norm)?])
    })?;
    Ok(McEstimate::from_values(rows.into_iter().map(|r| r[0]).collect()))
}

/// Monte-Carlo CMG quantity `E ||sigma^E_{x' x y' y} - sigma^E_q||_1`.
#[allow(clippy::too_many_arguments)]
pub fn cmg_quantity_mc(
    cd: &ControlDistribution,
    ch: &CqChannelE,
    sizes: CmgSizes,
    samplers: (InnerSampler, InnerSampler),
    norm: Normalization,
    trials: usize,
    seed: u64,
    exec: &dyn TrialExecutor,
) -> Result<McEstimate> {
    run_codebook_mc(cd, ch, [1, 1, 1, 1], sizes, samplers, norm, trials, seed, exec)
}

/// Monte-Carlo privacy error `E_codebook E_{m1 m2} ||sigma^E_{m1 m2} - sigma^E_q||_1`
/// with exact averaging over message pairs.
#[allow(clippy::too_many_arguments)]
pub fn wiretap_privacy_mc(
    cd: &ControlDistribution,
    ch: &CqChannelE,
    rates: RateSplit,
    sizes: CmgSizes,
    samplers: (InnerSampler, InnerSampler),
    trials: usize,
    seed: u64,
    exec: &dyn TrialExecutor,
) -> Result<McEstimate> {
    run_codebook_mc(cd, ch, rates.counts()?, sizes, samplers, Normalization::Uniform, trials, seed, exec)
}

/// Which additive term the privacy inequalities carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrivacyVariant {
    /// `3 + log eps^{-1/2}` (CMG covering lemma).
    Lemma,
    /// `3 + log eps^{-1}` (wiretap theorem).
    Theorem,
}

#[derive(Clone, Debug)]
pub struct PrivacyConstraint {
    pub name: String,
    pub lhs_bits: f64,
    pub information: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// The eight privacy inequalities on the control state (registers
/// `Xp, X, Yp, Y` and Eve's factors).
pub fn privacy_rate_check(
    control: &CqState,
    sizes: CmgSizes,
    eps: f64,
    f: f64,
    variant: PrivacyVariant,
) -> Result<Vec<PrivacyConstraint>> {
    if !(f >= 1.0) {
        return Err(Error::Precondition(format!("scale factor f = {f} must be at least 1")));
    }
    let state = control.embed()?;
    let e_labels: Vec<String> = control.quantum_layout().labels().to_vec();
    let e: Vec<&str> = e_labels.iter().map(|s| s.as_str()).collect();
    let lg = |n: usize| Float::log2(n as f64);
    let (lp, l, mp, m) = (lg(sizes.l_prime), lg(sizes.l), lg(sizes.m_prime), lg(sizes.m));
    let extra = 3.0
        + match variant {
            PrivacyVariant::Lemma => 0.5 * Float::log2(1.0 / eps),
            PrivacyVariant::Theorem => Float::log2(1.0 / eps),
        };
    let lf = Float::log2(f);
    let rows: [(&[&str], f64, bool); 8] = [
        (&["Xp"], lp, false),
        (&["Yp"], mp, false),
        (&["Xp", "X"], lp + l, false),
        (&["Yp", "Y"], mp + m, false),
        (&["Xp", "Yp"], lp + mp, true),
        (&["Xp", "Yp", "Y"], lp + mp + m, true),
        (&["Xp", "X", "Yp"], lp + mp + l, true),
        (&["Xp", "X", "Yp", "Y"], lp + mp + l + m, false),
    ];
    let mut out = Vec::with_capacity(8);
    for (regs, lhs, with_f) in rows {
        let reduced = state.partial_trace(&regs.iter().copied().chain(e.iter().copied()).collect::<Vec<_>>())?;
        let info = max_mutual_information(&reduced, regs, &e, eps)?;
        let threshold = info + extra + if with_f { lf } else { 0.0 };
        out.push(PrivacyConstraint {
            name: format!("{}:E", regs.join("")),
            lhs_bits: lhs,
            information: info,
            threshold,
            pass: lhs > threshold,
        });
    }
    Ok(out)
}

/// CMG covering error bound under inner-layer dependence `(e, f(e), 0)`.
pub fn cmg_lemma_bound(eps: f64, e: f64) -> f64 {
    2.0 * Float::sqrt(160.0 * Float::powf(eps, 1.0 / 64.0) + Float::sqrt(750.0 * Float::powf(eps, 1.0 / 32.0) + 8.0 * e))
        + 4.0 * e
}

/// Privacy/correctness parameter of the wiretap theorem; the `2^{2^14}`
/// prefactor overflows `f64` for every `eps > 0`, giving `+inf`.
pub fn wiretap_alpha(eps: f64, e: f64) -> f64 {
    let log2_first = 16384.0 + Float::log2(eps) / 6.0;
    Float::powf(2.0, log2_first) + cmg_lemma_bound(eps, e)
}

/// Scale factor `f` for sticky inner layers: the largest ratio between the
/// dependent average and its decoupled reference over every context in
/// which the inner symbol is re-drawn (Bob's symbols fixed, only `y'`
/// fixed, or averaged; symmetric for Bob; and both layers at once).
pub fn cmg_scale_factor(cd: &ControlDistribution, ch: &CqChannelE, q: usize, samplers: (InnerSampler, InnerSampler)) -> Result<f64> {
    ch.check(cd)?;
    let [nxp, nx, nyp, ny] = cd.dims;
    let a = cd.alice[q].weights();
    let b = cd.bob[q].weights();
    let side = ch.layout().side();
    let op = |m: CMatrix| HermitianOperator::new(m, ch.layout().clone());
    let ratio = |w: &CMatrix, r: &CMatrix| -> Result<f64> {
        let r = op(r.clone())?;
        let w = op(w.clone())?;
        let sp = r.support_projector();
        if w.trace() - sp.trace_product(&w)? > crate::linalg::SUPPORT_TOLERANCE * w.trace().max(1e-300) {
            return Ok(f64::INFINITY);
        }
        Ok(w.sandwich(r.pseudo_power(-0.5).matrix())?.lambda_max())
    };
    // E[sigma | alice context, bob context]; context None averages.
    let avg = |xp: usize, x: Option<usize>, yp: Option<usize>, y: Option<usize>| -> CMatrix {
        let mut m = CMatrix::zeros(side, side);
        let mut tot = 0.0;
        for xx in 0..nx {
            if x.is_some_and(|v| v != xx) {
                continue;
            }
            let wa = a[xp * nx + xx];
            if wa == 0.0 {
                continue;
            }
            for yyp in 0..nyp {
                if yp.is_some_and(|v| v != yyp) {
                    continue;
                }
                for yy in 0..ny {
                    if y.is_some_and(|v| v != yy) {
                        continue;
                    }
                    let w = wa * b[yyp * ny + yy];
                    if w > 0.0 {
                        m += ch.output(xx, yy).matrix().scale(w);
                        tot += w;
                    }
                }
            }
        }
        if tot > 0.0 {
            m.scale(1.0 / tot)
        } else {
            m
        }
    };
    let (ea, eb) = (samplers.0.eta(), samplers.1.eta());
    let mut f: f64 = 1.0;
    let pa = |xp: usize| (0..nx).map(|x| a[xp * nx + x]).sum::<f64>();
    let pb = |yp: usize| (0..ny).map(|y| b[yp * ny + y]).sum::<f64>();
    // Alice's layer re-drawn; Bob context full, y' only, none
    if ea > 0.0 {
        for xp in (0..nxp).filter(|&v| pa(v) > 0.0) {
            for x in (0..nx).filter(|&v| a[xp * nx + v] > 0.0) {
                for yp in (0..nyp).filter(|&v| pb(v) > 0.0) {
                    for y in (0..ny).filter(|&v| b[yp * ny + v] > 0.0) {
                        let r = ratio(&avg(xp, Some(x), Some(yp), Some(y)), &avg(xp, None, Some(yp), Some(y)))?;
                        f = f.max((1.0 - ea) + ea * r);
                    }
                    let r = ratio(&avg(xp, Some(x), Some(yp), None), &avg(xp, None, Some(yp), None))?;
                    f = f.max((1.0 - ea) + ea * r);
                }
                let r = ratio(&avg(xp, Some(x), None, None), &avg(xp, None, None, None))?;
                f = f.max((1.0 - ea) + ea * r);
            }
        }
    }
    if eb > 0.0 {
        for yp in (0..nyp).filter(|&v| pb(v) > 0.0) {
            for y in (0..ny).filter(|&v| b[yp * ny + v] > 0.0) {
                for xp in (0..nxp).filter(|&v| pa(v) > 0.0) {
                    for x in (0..nx).filter(|&v| a[xp * nx + v] > 0.0) {
                        let r = ratio(&avg(xp, Some(x), Some(yp), Some(y)), &avg(xp, Some(x), Some(yp), None))?;
                        f = f.max((1.0 - eb) + eb * r);
                    }
                    let r = ratio(&avg(xp, None, Some(yp), Some(y)), &avg(xp, None, Some(yp), None))?;
                    f = f.max((1.0 - eb) + eb * r);
                }
            }
        }
    }
    if ea > 0.0 && eb > 0.0 {
        for xp in (0..nxp).filter(|&v| pa(v) > 0.0) {
            for yp in (0..nyp).filter(|&v| pb(v) > 0.0) {
                let reference = avg(xp, None, Some(yp), None);
                for x in (0..nx).filter(|&v| a[xp * nx + v] > 0.0) {
                    for y in (0..ny).filter(|&v| b[yp * ny + v] > 0.0) {
                        let w = reference.scale((1.0 - ea) * (1.0 - eb))
                            + avg(xp, Some(x), Some(yp), None).scale(ea * (1.0 - eb))
                            + avg(xp, None, Some(yp), Some(y)).scale((1.0 - ea) * eb)
                            + avg(xp, Some(x), Some(yp), Some(y)).scale(ea * eb);
                        f = f.max(ratio(&w, &reference)?);
                    }
                }
            }
        }
    }
    if !f.is_finite() {
        return Err(Error::SupportViolation("dependent average leaves the reference support".to_string()));
    }
    Ok(f)
}
