//! Flattening maps.
//!
//! For PSD `sigma = sum_a sigma(a) |a><a|` and `delta > 0` the map uses the
//! denominator `F = ceil(1 / (delta * lambda_min^+))` and multiplicities
//! `f(a) = ceil(F sigma(a))` (zero on the kernel). Its Kraus operators are
//! `A_l |a> = |a>|l> / sqrt(f(a))` for `l <= f(a)`, so the output is
//! block-diagonal in the new register `L` and `F(sigma)` is close to flat:
//! `(1 + delta)^{-1} 1_{F'} / F <= F(sigma) <= 1_{F'} / F`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{
    fidelity, kron, identity, permute_factors, trace_distance, CMatrix, DensityOperator, HermitianOperator,
    TensorLayout, KERNEL_CUTOFF,
};

/// Largest denominator for which `F * sigma(a)` is still exact enough in f64.
const MAX_DENOMINATOR: f64 = 9.0e15;
/// `F sigma(a)` within this of an integer `n` from above is rounded to `n`.
const SNAP: f64 = 1e-12;

/// Flattening map built from a PSD operator `sigma`.
#[derive(Clone, Debug)]
pub struct FlatteningMap {
    layout: TensorLayout,
    eigenvalues: Vec<f64>,
    basis: CMatrix,
    denominator: u64,
    multiplicities: Vec<u64>,
    requested_delta: f64,
    delta: f64,
}

/// Build the flattening of `sigma` with parameter `delta`.
pub fn build_flattening(sigma: &DensityOperator, delta: f64) -> Result<FlatteningMap> {
    build(sigma, delta, None)
}

/// As [`build_flattening`] but with `F` capped at `max_denominator`; the
/// achieved `delta` is then reported by [`FlatteningMap::delta`].
pub fn build_flattening_capped(sigma: &DensityOperator, delta: f64, max_denominator: u64) -> Result<FlatteningMap> {
    build(sigma, delta, Some(max_denominator))
}

fn build(sigma: &DensityOperator, delta: f64, cap: Option<u64>) -> Result<FlatteningMap> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Precondition(format!("flattening parameter must be positive, got {delta}")));
    }
    let e = sigma.eigh();
    let top = e.lambda_max();
    if top <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let cut = KERNEL_CUTOFF * top;
    let retained = |l: f64| l > cut;
    let lambda_min = e.values.iter().copied().filter(|&l| retained(l)).fold(f64::INFINITY, f64::min);
    let raw = Float::ceil(1.0 / (delta * lambda_min));
    let mut f_den = raw;
    if let Some(c) = cap {
        f_den = f_den.min(c.max(1) as f64);
    }
    if f_den > MAX_DENOMINATOR {
        return Err(Error::CapExceeded(format!("flattening denominator {raw:e} too large")));
    }
    let denominator = f_den as u64;
    let multiplicities: Vec<u64> = e
        .values
        .iter()
        .map(|&l| {
            if !retained(l) {
                return 0;
            }
            let x = f_den * l;
            let n = Float::round(x);
            let m = if x > n && x - n <= SNAP { n } else { Float::ceil(x) };
            (m as u64).max(1)
        })
        .collect();
    let delta_achieved = e
        .values
        .iter()
        .zip(&multiplicities)
        .filter(|(_, &m)| m > 0)
        .map(|(&l, &m)| m as f64 / (f_den * l) - 1.0)
        .fold(0.0, f64::max);
    Ok(FlatteningMap {
        layout: sigma.layout().clone(),
        eigenvalues: e.values,
        basis: e.vectors,
        denominator,
        multiplicities,
        requested_delta: delta,
        delta: delta_achieved,
    })
}

impl FlatteningMap {
    /// The denominator `F`.
    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    /// `f(a)` for each eigenvector of `sigma` (ascending eigenvalue order).
    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicities
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Dimension `L = max_a f(a)` of the new register.
    pub fn register_dim(&self) -> u64 {
        self.multiplicities.iter().copied().max().unwrap_or(0)
    }

    /// `|F'| = sum_a f(a)`, the dimension of the flattened support.
    pub fn support_dim(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    /// Achieved flatness: `max_a f(a) / (F sigma(a)) - 1`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn requested_delta(&self) -> f64 {
        self.requested_delta
    }

    /// Layout of the flattened system.
    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    /// `V D V^dagger` where `D` is diagonal in the eigenbasis.
    fn conj_diag(&self, d: impl Fn(usize) -> f64) -> CMatrix {
        let n = self.basis.nrows();
        let mut scaled = self.basis.clone();
        for k in 0..n {
            let w = d(k);
            for i in 0..n {
                scaled[(i, k)] *= w;
            }
        }
        scaled * self.basis.adjoint()
    }

    /// Distinct block operators `K_j = V D_j V^dagger` with their
    /// multiplicities: the output block for every `l` in
    /// `(v_{j-1}, v_j]` is `K_j rho K_j`.
    fn block_operators(&self) -> Vec<(u64, CMatrix)> {
        let mut levels: Vec<u64> = self.multiplicities.iter().copied().filter(|&m| m > 0).collect();
        levels.sort_unstable();
        levels.dedup();
        let mut out = Vec::with_capacity(levels.len());
        let mut prev = 0;
        for &v in &levels {
            let k = self.conj_diag(|a| {
                let m = self.multiplicities[a];
                if m >= v {
                    1.0 / Float::sqrt(m as f64)
                } else {
                    0.0
                }
            });
            out.push((v - prev, k));
            prev = v;
        }
        out
    }

    /// Kraus operator `A_l` (1-based `l`) as a `(|A| L) x |A|` matrix, output
    /// index `a * L + (l - 1)`.
    pub fn kraus(&self, l: u64) -> Result<CMatrix> {
        let big_l = self.register_dim();
        if l == 0 || l > big_l {
            return Err(Error::Precondition(format!("Kraus index {l} outside 1..={big_l}")));
        }
        let k = self.conj_diag(|a| {
            let m = self.multiplicities[a];
            if m >= l {
                1.0 / Float::sqrt(m as f64)
            } else {
                0.0
            }
        });
        let n = k.nrows();
        let big = big_l as usize;
        let mut out = CMatrix::zeros(n * big, n);
        for i in 0..n {
            for j in 0..n {
                out[(i * big + (l as usize - 1), j)] = k[(i, j)];
            }
        }
        Ok(out)
    }

    /// `|| sum_l A_l^dagger A_l - Pi_sigma ||_max`, summed explicitly over `l`.
    pub fn kraus_completeness_residual(&self) -> f64 {
        let n = self.basis.nrows();
        let mut acc = alloc::vec![0.0f64; n];
        for l in 1..=self.register_dim() {
            for (a, &m) in self.multiplicities.iter().enumerate() {
                if m >= l {
                    acc[a] += 1.0 / m as f64;
                }
            }
        }
        let sum = self.conj_diag(|a| acc[a]);
        let support = self.conj_diag(|a| if self.multiplicities[a] > 0 { 1.0 } else { 0.0 });
        (sum - support).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Apply the map to the factors of `rho` carrying this map's labels.
    pub fn apply(&self, rho: &HermitianOperator) -> Result<FlattenedOperator> {
        FlattenedOperator::from_operator(rho.clone()).flatten(self)
    }

    /// Eigenvalues of `F(sigma)` on its support: `sigma(a) / f(a)`, each with
    /// multiplicity `f(a)`.
    pub fn flattened_spectrum(&self) -> Vec<(f64, u64)> {
        self.eigenvalues
            .iter()
            .zip(&self.multiplicities)
            .filter(|(_, &m)| m > 0)
            .map(|(&l, &m)| (l / m as f64, m))
            .collect()
    }
}

/// Output of one or more flattening maps: a direct sum of blocks on the
/// original layout, each repeated `multiplicity` times.
#[derive(Clone, Debug)]
pub struct FlattenedOperator {
    blocks: Vec<(u64, HermitianOperator)>,
    registers: Vec<(String, u64)>,
}

impl FlattenedOperator {
    pub fn from_operator(op: HermitianOperator) -> Self {
        Self { blocks: alloc::vec![(1, op)], registers: Vec::new() }
    }

    pub fn blocks(&self) -> &[(u64, HermitianOperator)] {
        &self.blocks
    }

    /// Labels and dimensions of the registers added so far.
    pub fn registers(&self) -> &[(String, u64)] {
        &self.registers
    }

    /// Apply a further flattening map to every block.
    pub fn flatten(&self, map: &FlatteningMap) -> Result<Self> {
        let layout = self.blocks[0].1.layout().clone();
        let sys: Vec<&str> = map.layout.labels().iter().map(|s| s.as_str()).collect();
        let pos = layout.positions(&sys)?;
        for (k, &p) in pos.iter().enumerate() {
            if layout.dims()[p] != map.layout.dims()[k] {
                return Err(Error::LayoutMismatch(format!("factor `{}` dimension differs", sys[k])));
            }
        }
        let rest: Vec<usize> = (0..layout.len()).filter(|p| !pos.contains(p)).collect();
        let order: Vec<usize> = pos.iter().chain(rest.iter()).copied().collect();
        let dims = layout.dims();
        let ordered_dims: Vec<usize> = order.iter().map(|&p| dims[p]).collect();
        let mut inverse = alloc::vec![0usize; order.len()];
        for (k, &p) in order.iter().enumerate() {
            inverse[p] = k;
        }
        let rest_dim: usize = rest.iter().map(|&p| dims[p]).product();
        let ops: Vec<(u64, CMatrix)> =
            map.block_operators().into_iter().map(|(m, k)| (m, kron(&k, &identity(rest_dim)))).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len() * ops.len());
        for (mult, block) in &self.blocks {
            let moved = permute_factors(block.matrix(), dims, &order);
            for (m, k) in &ops {
                let out = k * &moved * k;
                let back = permute_factors(&out, &ordered_dims, &inverse);
                blocks.push((mult * m, HermitianOperator::new(back, layout.clone())?));
            }
        }
        let mut registers = self.registers.clone();
        registers.push((format!("L_{}", sys.join("")), map.register_dim()));
        Ok(Self { blocks, registers })
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|(m, b)| *m as f64 * b.trace()).sum()
    }

    /// Spectrum as `(eigenvalue, multiplicity)` pairs, zeros dropped.
    pub fn spectrum(&self) -> Vec<(f64, u64)> {
        let mut out = Vec::new();
        for (m, b) in &self.blocks {
            for l in b.eigenvalues() {
                if l.abs() > 1e-300 {
                    out.push((l, *m));
                }
            }
        }
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.blocks.len() != other.blocks.len()
            || self.blocks.iter().zip(&other.blocks).any(|((a, x), (b, y))| a != b || x.layout() != y.layout())
        {
            return Err(Error::LayoutMismatch("flattened operators come from different maps".into()));
        }
        Ok(())
    }

    /// Fidelity of two outputs of the same maps (blockwise sum).
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for ((m, a), (_, b)) in self.blocks.iter().zip(&other.blocks) {
            acc += *m as f64 * fidelity(a, b)?;
        }
        Ok(acc)
    }

    /// `||X - Y||_1` for two outputs of the same maps.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for ((m, a), (_, b)) in self.blocks.iter().zip(&other.blocks) {
            acc += *m as f64 * trace_distance(a, b)?;
        }
        Ok(acc)
    }

    /// Dense operator on `layout (x) L` with the register last. Only for a
    /// single flattening; errors when the dense side would exceed `max_side`.
    pub fn to_dense(&self, max_side: usize) -> Result<HermitianOperator> {
        if self.registers.len() != 1 {
            return Err(Error::Precondition("dense form needs exactly one flattening register".into()));
        }
        let (label, big_l) = &self.registers[0];
        let layout = self.blocks[0].1.layout().clone();
        let n = layout.side();
        let side = n * *big_l as usize;
        if side > max_side {
            return Err(Error::CapExceeded(format!("dense flattened side {side} exceeds {max_side}")));
        }
        // L most significant, then move it last
        let mut m = CMatrix::zeros(side, side);
        let mut l = 0usize;
        for (mult, b) in &self.blocks {
            for _ in 0..*mult {
                m.view_mut((l * n, l * n), (n, n)).copy_from(b.matrix());
                l += 1;
            }
        }
        let mut dims = alloc::vec![*big_l as usize];
        dims.extend_from_slice(layout.dims());
        let perm: Vec<usize> = (1..dims.len()).chain(core::iter::once(0)).collect();
        let moved = permute_factors(&m, &dims, &perm);
        let out_layout = layout.concat(&TensorLayout::single(label, *big_l as usize)?)?;
        HermitianOperator::new(moved, out_layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{real, CVector};
    use crate::random::random_density;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lay(label: &str, d: usize) -> TensorLayout {
        TensorLayout::single(label, d).unwrap()
    }

    #[test]
    fn quarter_three_quarter_example() {
        let s = DensityOperator::diagonal(&[0.25, 0.75], lay("A", 2)).unwrap();
        let m = build_flattening(&s, 1.0).unwrap();
        assert_eq!(m.denominator(), 4);
        assert_eq!(m.multiplicities(), &[1, 3]);
        assert_eq!(m.support_dim(), 4);
        let flat = m.apply(&s).unwrap().to_dense(64).unwrap();
        let e = flat.eigenvalues();
        // 8-dimensional output: 4 eigenvalues 1/4, rest 0
        let quarters = e.iter().filter(|&&l| (l - 0.25).abs() < 1e-15).count();
        assert_eq!(quarters, 4);
        assert!(e.iter().all(|&l| l.abs() < 1e-15 || (l - 0.25).abs() < 1e-15));
    }

    #[test]
    fn kernel_directions_get_zero_multiplicity() {
        let s = DensityOperator::diagonal(&[0.0, 0.5, 0.5], lay("A", 3)).unwrap();
        let m = build_flattening(&s, 0.5).unwrap();
        assert_eq!(m.multiplicities()[0], 0);
        assert!(m.kraus_completeness_residual() < 1e-12);
    }

    #[test]
    fn dense_kraus_application_matches_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_density(2, 2, &mut rng);
        let m = build_flattening_capped(&s, 0.5, 16).unwrap();
        let rho = random_density(2, 2, &mut rng);
        let mut dense = CMatrix::zeros(2 * m.register_dim() as usize, 2 * m.register_dim() as usize);
        for l in 1..=m.register_dim() {
            let k = m.kraus(l).unwrap();
            dense += &k * rho.matrix() * k.adjoint();
        }
        let blocks = m.apply(&rho).unwrap().to_dense(1024).unwrap();
        assert!((dense - blocks.matrix()).norm() < 1e-13);
    }

    #[test]
    fn cap_reports_achieved_delta() {
        let s = DensityOperator::diagonal(&[0.001, 0.999], lay("A", 2)).unwrap();
        let m = build_flattening_capped(&s, 0.01, 64).unwrap();
        assert_eq!(m.denominator(), 64);
        assert!(m.delta() > 0.01);
    }

    #[test]
    fn flattening_a_factor_of_a_bipartite_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = TensorLayout::new(&[("B", 2), ("A", 3)]).unwrap();
        let rho = random_density(6, 6, &mut rng).relabel(l).unwrap();
        let s = random_density(3, 3, &mut rng).relabel(lay("A", 3)).unwrap();
        let m = build_flattening_capped(&s, 1.0, 32).unwrap();
        let out = m.apply(&rho).unwrap();
        assert!((out.trace() - 1.0).abs() < 1e-12);
        // marginal on B is untouched since the map is trace preserving on supp
        let mut b = CMatrix::zeros(2, 2);
        for (mult, blk) in out.blocks() {
            b += blk.partial_trace(&["B"]).unwrap().matrix().scale(*mult as f64);
        }
        assert!((b - rho.partial_trace(&["B"]).unwrap().matrix()).norm() < 1e-12);
    }

    #[test]
    fn fidelity_can_increase_for_inputs_not_commuting_with_sigma() {
        // |+> and |-> are orthogonal; after flattening with f = (1, 3) the
        // blocks overlap: 1/3 + 1/6 + 1/6
        let s = DensityOperator::diagonal(&[0.25, 0.75], lay("A", 2)).unwrap();
        let m = build_flattening(&s, 1.0).unwrap();
        let h = 1.0 / Float::sqrt(2.0);
        let plus = DensityOperator::pure(&CVector::from_vec(alloc::vec![real(h), real(h)]), lay("A", 2)).unwrap();
        let minus = DensityOperator::pure(&CVector::from_vec(alloc::vec![real(h), real(-h)]), lay("A", 2)).unwrap();
        assert!(fidelity(&plus, &minus).unwrap() < 1e-12);
        let after = m.apply(&plus).unwrap().fidelity(&m.apply(&minus).unwrap()).unwrap();
        assert!((after - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn flatness_sandwich_and_support(seed in any::<u64>(), d in 1usize..6, delta in prop::sample::select(alloc::vec![1.0, 0.5, 0.25])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_density(d, d, &mut rng);
            let m = build_flattening(&s, delta).unwrap();
            let f = m.denominator() as f64;
            for (l, _) in m.flattened_spectrum() {
                prop_assert!(l <= 1.0 / f * (1.0 + 1e-12));
                prop_assert!(l >= 1.0 / ((1.0 + delta) * f) * (1.0 - 1e-12));
            }
            let sup = m.support_dim() as f64;
            prop_assert!(s.trace() * f <= sup * (1.0 + 1e-12));
            prop_assert!(sup <= (1.0 + delta) * s.trace() * f * (1.0 + 1e-12));
            prop_assert!(m.delta() <= delta * (1.0 + 1e-9));
            prop_assert!(m.kraus_completeness_residual() < 1e-12);
        }

        #[test]
        fn fidelity_never_decreases_trace_distance_contracts(seed in any::<u64>(), d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_density(d, d, &mut rng);
            let m = build_flattening_capped(&s, 0.5, 256).unwrap();
            let a = random_density(d, d, &mut rng);
            let b = random_density(d, 1 + d / 2, &mut rng);
            let fa = m.apply(&a).unwrap();
            let fb = m.apply(&b).unwrap();
            prop_assert!(fa.fidelity(&fb).unwrap() >= fidelity(&a, &b).unwrap() - 1e-9);
            prop_assert!(fa.trace_distance(&fb).unwrap() <= trace_distance(&a, &b).unwrap() + 1e-10);
        }

        #[test]
        fn fidelity_preserved_when_classical_in_sigma_basis(seed in any::<u64>(), d in 1usize..5, db in 1usize..3) {
            // inputs block-diagonal in sigma's eigenbasis on A, arbitrary on B
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_density(d, d, &mut rng).relabel(lay("A", d)).unwrap();
            let m = build_flattening_capped(&s, 0.25, 512).unwrap();
            let basis = s.eigh().vectors;
            let full = TensorLayout::new(&[("A", d), ("B", db)]).unwrap();
            let mk = |rng: &mut ChaCha8Rng| {
                let mut acc = CMatrix::zeros(d * db, d * db);
                for a in 0..d {
                    let v = basis.column(a).into_owned();
                    let pa = &v * v.adjoint();
                    let r = random_density(db, db, rng);
                    acc += kron(&pa, r.matrix()).scale(1.0 / d as f64);
                }
                DensityOperator::from_matrix(acc, full.clone()).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let f0 = fidelity(&a, &b).unwrap();
            let f1 = m.apply(&a).unwrap().fidelity(&m.apply(&b).unwrap()).unwrap();
            prop_assert!((f1 - f0).abs() < 1e-9);
        }

        #[test]
        fn product_of_flattenings_is_flat_and_monotone(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = TensorLayout::new(&[("X", 2), ("M", 2)]).unwrap();
            let sx = random_density(2, 2, &mut rng).relabel(lay("X", 2)).unwrap();
            let sm = random_density(2, 2, &mut rng).relabel(lay("M", 2)).unwrap();
            let delta = 0.5;
            let mx = build_flattening_capped(&sx, delta, 64).unwrap();
            let mm = build_flattening_capped(&sm, delta, 64).unwrap();
            let a = random_density(4, 4, &mut rng).relabel(full.clone()).unwrap();
            let tau = sx.tensor(&sm).unwrap();
            let fa = FlattenedOperator::from_operator(a.as_operator().clone()).flatten(&mx).unwrap().flatten(&mm).unwrap();
            let ft = FlattenedOperator::from_operator(tau.as_operator().clone()).flatten(&mx).unwrap().flatten(&mm).unwrap();
            prop_assert!(fa.fidelity(&ft).unwrap() >= fidelity(&a, &tau).unwrap() - 1e-9);
            let denom = (mx.denominator() * mm.denominator()) as f64;
            let d2 = (1.0 + mx.delta()) * (1.0 + mm.delta());
            for (l, _) in ft.spectrum() {
                if l > 1e-14 {
                    prop_assert!(l <= (1.0 + 1e-12) / denom);
                    prop_assert!(l >= (1.0 - 1e-12) / (d2 * denom));
                }
            }
        }
    }
}
