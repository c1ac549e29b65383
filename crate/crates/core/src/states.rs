//! Classical-quantum states, purifications and small state utilities.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, real, trace_distance, CMatrix, CVector, DensityOperator, HermitianOperator, TensorLayout, KERNEL_CUTOFF,
};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Finite (sub)probability distribution over `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbDist {
    weights: Vec<f64>,
}

impl ProbDist {
    /// Non-negative weights with total mass at most 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDistribution(format!("weight {w} is not a finite non-negative number")));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("total mass {total} exceeds 1")));
        }
        Ok(Self { weights })
    }

    /// Normalized distribution (total mass 1 within tolerance).
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let d = Self::new(weights)?;
        if (d.total() - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("total mass {} is not 1", d.total())));
        }
        Ok(d)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(alloc::vec![1.0 / n as f64; n])
    }

    /// Point mass on `k`.
    pub fn delta(n: usize, k: usize) -> Result<Self> {
        let mut w = alloc::vec![0.0; n];
        *w.get_mut(k).ok_or_else(|| Error::InvalidDistribution("index out of range".into()))? = 1.0;
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::AlphabetMismatch(format!("{} vs {}", self.len(), other.len())));
        }
        Ok(self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum())
    }

    /// Product distribution, `self` as the most significant index.
    pub fn product(&self, other: &Self) -> Result<Self> {
        let mut w = Vec::with_capacity(self.len() * other.len());
        for a in &self.weights {
            for b in &other.weights {
                w.push(a * b);
            }
        }
        Self::new(w)
    }
}

/// Pointwise minimum `p ∩ q`.
pub fn intersect_dist(p: &ProbDist, q: &ProbDist) -> Result<ProbDist> {
    if p.len() != q.len() {
        return Err(Error::AlphabetMismatch(format!("{} vs {}", p.len(), q.len())));
    }
    ProbDist::new(p.weights.iter().zip(&q.weights).map(|(a, b)| a.min(*b)).collect())
}

/// State classical on named registers and quantum on `quantum`:
/// `sum_x p(x) |x><x| (x) rho_x`, with `x` running row-major over the
/// classical registers.
#[derive(Clone, Debug)]
pub struct CqState {
    classical: TensorLayout,
    dist: ProbDist,
    conditionals: Vec<DensityOperator>,
    quantum: TensorLayout,
}

impl CqState {
    pub fn new(classical: TensorLayout, dist: ProbDist, conditionals: Vec<DensityOperator>) -> Result<Self> {
        if dist.len() != classical.side() {
            return Err(Error::AlphabetMismatch(format!(
                "distribution has {} entries, registers need {}",
                dist.len(),
                classical.side()
            )));
        }
        if conditionals.len() != dist.len() {
            return Err(Error::AlphabetMismatch(format!(
                "{} conditionals for {} labels",
                conditionals.len(),
                dist.len()
            )));
        }
        let quantum = conditionals[0].layout().clone();
        if conditionals.iter().any(|c| c.layout() != &quantum) {
            return Err(Error::LayoutMismatch("conditional states live on different layouts".into()));
        }
        if quantum.labels().iter().any(|l| classical.contains(l)) {
            return Err(Error::InvalidLayout("classical and quantum labels overlap".into()));
        }
        Ok(Self { classical, dist, conditionals, quantum })
    }

    pub fn classical_layout(&self) -> &TensorLayout {
        &self.classical
    }

    pub fn quantum_layout(&self) -> &TensorLayout {
        &self.quantum
    }

    pub fn distribution(&self) -> &ProbDist {
        &self.dist
    }

    pub fn conditionals(&self) -> &[DensityOperator] {
        &self.conditionals
    }

    pub fn conditional(&self, x: usize) -> &DensityOperator {
        &self.conditionals[x]
    }

    /// Full layout: classical registers then quantum factors.
    pub fn layout(&self) -> Result<TensorLayout> {
        self.classical.concat(&self.quantum)
    }

    /// Block-diagonal density operator on classical (x) quantum.
    pub fn embed(&self) -> Result<DensityOperator> {
        let layout = self.layout()?;
        let q = self.quantum.side();
        let mut m = CMatrix::zeros(layout.side(), layout.side());
        for (x, (w, rho)) in self.dist.weights().iter().zip(&self.conditionals).enumerate() {
            if *w == 0.0 {
                continue;
            }
            let mut block = m.view_mut((x * q, x * q), (q, q));
            block += rho.matrix().scale(*w);
        }
        DensityOperator::from_psd(HermitianOperator::new(m, layout)?)
    }

    /// `sum_x p(x) rho_x`.
    pub fn quantum_marginal(&self) -> DensityOperator {
        let mut m = CMatrix::zeros(self.quantum.side(), self.quantum.side());
        for (w, rho) in self.dist.weights().iter().zip(&self.conditionals) {
            if *w != 0.0 {
                m += rho.matrix().scale(*w);
            }
        }
        DensityOperator::from_psd(HermitianOperator::new(m, self.quantum.clone()).expect("sum of Hermitian"))
            .expect("sum of PSD")
    }

    /// Marginal on the classical registers `keep` (in that order); the
    /// quantum part is kept.
    pub fn marginal<S: AsRef<str>>(&self, keep: &[S]) -> Result<CqState> {
        let pos = self.classical.positions(keep)?;
        let kept = self.classical.select(keep)?;
        let dims = self.classical.dims();
        let n = kept.side();
        let mut weights = alloc::vec![0.0; n];
        let mut mats: Vec<CMatrix> = (0..n).map(|_| CMatrix::zeros(self.quantum.side(), self.quantum.side())).collect();
        for (x, (w, rho)) in self.dist.weights().iter().zip(&self.conditionals).enumerate() {
            if *w == 0.0 {
                continue;
            }
            let digits = unravel(x, dims);
            let mut y = 0;
            for &p in &pos {
                y = y * dims[p] + digits[p];
            }
            weights[y] += w;
            mats[y] += rho.matrix().scale(*w);
        }
        let conditionals = mats
            .into_iter()
            .zip(&weights)
            .map(|(m, &w)| {
                let m = if w > 0.0 { m.scale(1.0 / w) } else { m };
                DensityOperator::from_psd(HermitianOperator::new(m, self.quantum.clone())?)
            })
            .collect::<Result<Vec<_>>>()?;
        CqState::new(kept, ProbDist::new(weights)?, conditionals)
    }

    /// Classical-only marginal as a diagonal density operator.
    pub fn classical_state<S: AsRef<str>>(&self, keep: &[S]) -> Result<DensityOperator> {
        let m = self.marginal(keep)?;
        let lay = self.classical.select(keep)?;
        DensityOperator::diagonal(m.dist.weights(), lay)
    }

    /// Replace the conditional states (same labels) by `f(x, rho_x)`.
    pub fn map_conditionals(&self, f: impl Fn(usize, &DensityOperator) -> Result<DensityOperator>) -> Result<Self> {
        let c = self.conditionals.iter().enumerate().map(|(x, r)| f(x, r)).collect::<Result<Vec<_>>>()?;
        Self::new(self.classical.clone(), self.dist.clone(), c)
    }
}

/// Digits of `x` in the mixed radix `dims` (most significant first).
pub fn unravel(mut x: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = alloc::vec![0; dims.len()];
    for i in (0..dims.len()).rev() {
        out[i] = x % dims[i];
        x /= dims[i];
    }
    out
}

/// Inverse of [`unravel`].
pub fn ravel(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (d, n)| acc * n + d)
}

/// Purification of a state on a reference system of dimension equal to its rank.
#[derive(Clone, Debug)]
pub struct Purification {
    vector: CVector,
    layout: TensorLayout,
    source_trace: f64,
}

impl Purification {
    pub fn vector(&self) -> &CVector {
        &self.vector
    }

    /// Layout: the system's factors followed by the reference factor.
    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    pub fn source_trace(&self) -> f64 {
        self.source_trace
    }

    pub fn state(&self) -> Result<DensityOperator> {
        DensityOperator::from_psd(HermitianOperator::projector_onto(&self.vector, self.layout.clone())?)
    }

    /// Partial trace over the reference.
    pub fn reduced(&self) -> Result<DensityOperator> {
        let sys: Vec<&str> = self.layout.labels()[..self.layout.len() - 1].iter().map(|s| s.as_str()).collect();
        self.state()?.partial_trace(&sys)
    }
}

/// `sum_i sqrt(lambda_i) |v_i> (x) |i>` over the support of `rho`.
pub fn purify(rho: &DensityOperator, reference: &str) -> Result<Purification> {
    let e = eigh(rho.matrix());
    let cut = KERNEL_CUTOFF * e.lambda_max();
    let support: Vec<usize> = (0..e.values.len()).filter(|&k| e.values[k] > cut && e.values[k] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::ZeroOperator);
    }
    let r = support.len();
    let n = rho.side();
    let mut v = CVector::zeros(n * r);
    for (j, &k) in support.iter().enumerate() {
        let s = Float::sqrt(e.values[k]);
        for i in 0..n {
            v[i * r + j] = e.vectors[(i, k)] * s;
        }
    }
    let layout = rho.layout().concat(&TensorLayout::single(reference, r)?)?;
    Ok(Purification { vector: v, layout, source_trace: rho.trace() })
}

/// Normalized maximally entangled state on `reference (x) system`.
pub fn epr_state(d: usize, reference: &str, system: &str) -> Result<DensityOperator> {
    let layout = TensorLayout::new(&[(reference, d), (system, d)])?;
    let mut v = CVector::zeros(d * d);
    let s = 1.0 / Float::sqrt(d as f64);
    for i in 0..d {
        v[i * d + i] = real(s);
    }
    DensityOperator::pure(&v, layout)
}

/// `||rho - sqrt(Pi) rho sqrt(Pi)||_1`, checking `0 <= Pi <= 1`.
pub fn gentle_residual(rho: &HermitianOperator, pi: &HermitianOperator) -> Result<f64> {
    if rho.layout() != pi.layout() {
        return Err(Error::LayoutMismatch("state and operator".into()));
    }
    let e = pi.eigh();
    if e.lambda_min() < -1e-9 || e.lambda_max() > 1.0 + 1e-9 {
        return Err(Error::Precondition("operator must satisfy 0 <= Pi <= 1".to_string()));
    }
    let root = e.map(|l| Float::sqrt(l.max(0.0)));
    let squeezed = rho.sandwich(&root)?;
    trace_distance(rho, &squeezed)
}
