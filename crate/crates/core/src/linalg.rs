//! Dense complex Hermitian algebra on labelled tensor products.
//!
//! Tensor products use the convention that the leftmost factor is the most
//! significant index. All operators are stored as dense column-major matrices.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::linalg::{SymmetricEigen, SVD};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::Float;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Eigenvalues below this multiple of the largest eigenvalue count as kernel.
pub const KERNEL_CUTOFF: f64 = 1e-12;
/// Negative eigenvalues down to `-PSD_TOLERANCE * lambda_max` are clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Inputs further than this (relative) from Hermitian are rejected.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;
/// Relative out-of-support mass above which a divergence is infinite.
pub const SUPPORT_TOLERANCE: f64 = 1e-9;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

/// Ordered list of named tensor factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorLayout {
    labels: Vec<String>,
    dims: Vec<usize>,
}

impl TensorLayout {
    pub fn new<S: AsRef<str>>(factors: &[(S, usize)]) -> Result<Self> {
        let mut labels: Vec<String> = Vec::with_capacity(factors.len());
        let mut dims = Vec::with_capacity(factors.len());
        for (label, dim) in factors {
            let label = label.as_ref();
            if *dim == 0 {
                return Err(Error::InvalidLayout(format!("factor `{label}` has dimension 0")));
            }
            if labels.iter().any(|l| l == label) {
                return Err(Error::InvalidLayout(format!("duplicate label `{label}`")));
            }
            labels.push(label.to_string());
            dims.push(*dim);
        }
        Ok(Self { labels, dims })
    }

    pub fn single(label: &str, dim: usize) -> Result<Self> {
        Self::new(&[(label, dim)])
    }

    /// Layout with no factors (side 1), used for scalars and trivial systems.
    pub fn trivial() -> Self {
        Self { labels: Vec::new(), dims: Vec::new() }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn side(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownFactor(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.position(label)?])
    }

    pub fn positions<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(labels.len());
        for l in labels {
            let p = self.position(l.as_ref())?;
            if out.contains(&p) {
                return Err(Error::InvalidLayout(format!("label `{}` repeated", l.as_ref())));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Sub-layout with the given labels, in the given order.
    pub fn select<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self> {
        let pos = self.positions(labels)?;
        Ok(Self {
            labels: pos.iter().map(|&p| self.labels[p].clone()).collect(),
            dims: pos.iter().map(|&p| self.dims[p]).collect(),
        })
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut factors: Vec<(&str, usize)> = self.iter().collect();
        factors.extend(other.iter());
        Self::new(&factors)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.labels.iter().map(String::as_str).zip(self.dims.iter().copied())
    }

    /// Replace the factor `label` by the given factors, in place.
    pub fn replace_factor<S: AsRef<str>>(&self, label: &str, with: &[(S, usize)]) -> Result<Self> {
        let pos = self.position(label)?;
        let mut factors: Vec<(&str, usize)> = Vec::new();
        for (i, f) in self.iter().enumerate() {
            if i == pos {
                factors.extend(with.iter().map(|(l, d)| (l.as_ref(), *d)));
            } else {
                factors.push(f);
            }
        }
        Self::new(&factors)
    }
}

// ---------------------------------------------------------------------------
// Plain matrix helpers
// ---------------------------------------------------------------------------

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut dev: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows().saturating_sub(1)) {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Row-major multi-index strides for `dims`.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Linear offsets of every multi-index over `positions` (in that order) inside
/// a space with the given full `dims`.
fn offsets(dims: &[usize], positions: &[usize]) -> Vec<usize> {
    let st = strides(dims);
    let mut out = vec![0usize];
    for &p in positions {
        let mut next = Vec::with_capacity(out.len() * dims[p]);
        for &o in &out {
            for k in 0..dims[p] {
                next.push(o + k * st[p]);
            }
        }
        out = next;
    }
    out
}

/// Reorder tensor factors: factor `j` of the result is factor `perm[j]` of `m`.
pub fn permute_factors(m: &CMatrix, dims: &[usize], perm: &[usize]) -> CMatrix {
    debug_assert_eq!(dims.len(), perm.len());
    let map = offsets(dims, perm);
    let n = map.len();
    CMatrix::from_fn(n, n, |i, j| m[(map[i], map[j])])
}

/// Permute the factors of a vector: factor `j` of the result is factor `perm[j]`.
pub fn permute_vector(v: &CVector, dims: &[usize], perm: &[usize]) -> CVector {
    let map = offsets(dims, perm);
    CVector::from_fn(map.len(), |i, _| v[map[i]])
}

/// Partial trace keeping the factors at `keep` (result ordered as in `keep`).
pub fn partial_trace_matrix(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let traced: Vec<usize> = (0..dims.len()).filter(|p| !keep.contains(p)).collect();
    let kept = offsets(dims, keep);
    let tr = offsets(dims, &traced);
    let n = kept.len();
    let mut out = CMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &tr {
                acc += m[(kept[i] + t, kept[j] + t)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// `op` acts on the factors at `positions` (in that order); returns `op`
/// tensored with the identity on the remaining factors, in the full ordering.
pub fn embed_operator(op: &CMatrix, dims: &[usize], positions: &[usize]) -> CMatrix {
    let rest: Vec<usize> = (0..dims.len()).filter(|p| !positions.contains(p)).collect();
    let rest_dim: usize = rest.iter().map(|&p| dims[p]).product();
    let big = kron(op, &identity(rest_dim));
    // big lives on factors ordered [positions..., rest...]
    let order: Vec<usize> = positions.iter().chain(rest.iter()).copied().collect();
    let ordered_dims: Vec<usize> = order.iter().map(|&p| dims[p]).collect();
    let mut inv = vec![0usize; order.len()];
    for (k, &p) in order.iter().enumerate() {
        inv[p] = k;
    }
    permute_factors(&big, &ordered_dims, &inv)
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn lambda_max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn lambda_min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Rebuild `sum_i f(lambda_i) |v_i><v_i|`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (k, &l) in self.values.iter().enumerate() {
            let w = f(l);
            for i in 0..n {
                scaled[(i, k)] *= w;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// Column `k` as a vector.
    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }
}

pub fn eigh(m: &CMatrix) -> Eigh {
    let n = m.nrows();
    if n == 0 {
        return Eigh { values: Vec::new(), vectors: CMatrix::zeros(0, 0) };
    }
    let se = SymmetricEigen::new(hermitian_part(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]).then(a.cmp(&b)));
    let values = idx.iter().map(|&k| se.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| se.eigenvectors[(i, idx[j])]);
    Eigh { values, vectors }
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    // The plain SVD iteration can stall on some complex inputs; cap it and
    // fall back to the Gram spectrum.
    match SVD::try_new(m.clone(), false, false, f64::EPSILON, 20_000) {
        Some(svd) => svd.singular_values.iter().copied().collect(),
        None => {
            let g = if m.nrows() <= m.ncols() { m * m.adjoint() } else { m.adjoint() * m };
            eigh(&g).values.into_iter().rev().map(|v| Float::sqrt(v.max(0.0))).collect()
        }
    }
}

/// Which Schatten norm to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schatten {
    One,
    Two,
    Infinity,
}

fn norm_of_values(values: impl Iterator<Item = f64>, p: Schatten) -> f64 {
    match p {
        Schatten::One => values.map(f64::abs).sum(),
        Schatten::Two => Float::sqrt(values.map(|x| x * x).sum::<f64>()),
        Schatten::Infinity => values.fold(0.0, |a, x| a.max(x.abs())),
    }
}

/// Schatten norm of an arbitrary matrix (via singular values).
pub fn schatten_norm(m: &CMatrix, p: Schatten) -> f64 {
    if p == Schatten::Two {
        return Float::sqrt(m.iter().map(|z| z.norm_sqr()).sum::<f64>());
    }
    norm_of_values(singular_values(m).into_iter(), p)
}

/// Projector onto the span of the columns of `cols`, dropping singular
/// directions below `rel_cutoff` times the largest singular value.
pub fn span_projector(cols: &CMatrix, rel_cutoff: f64) -> CMatrix {
    let n = cols.nrows();
    if cols.ncols() == 0 || max_abs(cols) == 0.0 {
        return CMatrix::zeros(n, n);
    }
    // Column-pivoted Gram-Schmidt (rank-revealing QR) with one
    // re-orthogonalization pass; stops once every residual column falls
    // below the cutoff.
    let mut work: Vec<CVector> = (0..cols.ncols()).map(|j| cols.column(j).into_owned()).collect();
    let top = work.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let cut = rel_cutoff * top;
    let mut basis: Vec<CVector> = Vec::new();
    while basis.len() < n {
        let (k, best) = work
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= cut {
            break;
        }
        let mut q = work.swap_remove(k);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&q);
                q -= b * proj;
            }
        }
        let nq = q.norm();
        if nq <= cut {
            continue;
        }
        q.unscale_mut(nq);
        for c in work.iter_mut() {
            let proj = q.dotc(c);
            *c -= &q * proj;
        }
        basis.push(q);
    }
    let mut p = CMatrix::zeros(n, n);
    for q in &basis {
        p += q * q.adjoint();
    }
    p
}

// ---------------------------------------------------------------------------
// Hermitian operators
// ---------------------------------------------------------------------------

/// Hermitian operator on a labelled tensor product space.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    matrix: CMatrix,
    layout: TensorLayout,
}

impl HermitianOperator {
    /// Validates shape and Hermiticity, then symmetrizes.
    pub fn new(matrix: CMatrix, layout: TensorLayout) -> Result<Self> {
        let side = layout.side();
        if matrix.nrows() != side || matrix.ncols() != side {
            return Err(Error::DimensionMismatch { expected: side, found: matrix.nrows().max(matrix.ncols()) });
        }
        let dev = hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOLERANCE * max_abs(&matrix).max(1.0) {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { matrix: hermitian_part(&matrix), layout })
    }

    pub fn zeros(layout: TensorLayout) -> Self {
        let n = layout.side();
        Self { matrix: CMatrix::zeros(n, n), layout }
    }

    pub fn identity(layout: TensorLayout) -> Self {
        let n = layout.side();
        Self { matrix: CMatrix::identity(n, n), layout }
    }

    /// Diagonal operator with real entries.
    pub fn diagonal(values: &[f64], layout: TensorLayout) -> Result<Self> {
        if values.len() != layout.side() {
            return Err(Error::DimensionMismatch { expected: layout.side(), found: values.len() });
        }
        let m = CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| real(v))));
        Ok(Self { matrix: m, layout })
    }

    /// `|v><v|` for a vector on `layout`.
    pub fn projector_onto(v: &CVector, layout: TensorLayout) -> Result<Self> {
        if v.len() != layout.side() {
            return Err(Error::DimensionMismatch { expected: layout.side(), found: v.len() });
        }
        Ok(Self { matrix: v * v.adjoint(), layout })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    pub fn eigh(&self) -> Eigh {
        eigh(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigh().values
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigh().lambda_max()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigh().lambda_min()
    }

    pub fn schatten_norm(&self, p: Schatten) -> f64 {
        if p == Schatten::Two {
            return schatten_norm(&self.matrix, p);
        }
        norm_of_values(self.eigenvalues().into_iter(), p)
    }

    /// Reinterpret on another layout of the same total dimension.
    pub fn relabel(&self, layout: TensorLayout) -> Result<Self> {
        if layout.side() != self.side() {
            return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", layout.dims(), self.layout.dims())));
        }
        Ok(Self { matrix: self.matrix.clone(), layout })
    }

    fn check_same_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", self.layout.labels(), other.layout.labels())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_layout(other)?;
        Ok(Self { matrix: &self.matrix + &other.matrix, layout: self.layout.clone() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_layout(other)?;
        Ok(Self { matrix: &self.matrix - &other.matrix, layout: self.layout.clone() })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { matrix: self.matrix.scale(s), layout: self.layout.clone() }
    }

    /// `Tr[self * other]`, real for Hermitian arguments.
    pub fn trace_product(&self, other: &Self) -> Result<f64> {
        self.check_same_layout(other)?;
        let mut acc = 0.0;
        for j in 0..self.side() {
            for i in 0..self.side() {
                acc += (self.matrix[(i, j)] * other.matrix[(j, i)]).re;
            }
        }
        Ok(acc)
    }

    /// Tensor product, factors of `self` first.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        Ok(Self { matrix: kron(&self.matrix, &other.matrix), layout: self.layout.concat(&other.layout)? })
    }

    /// Reorder factors to the given label order.
    pub fn permute<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.layout.len() {
            return Err(Error::LayoutMismatch("permutation must list every factor".into()));
        }
        let perm = self.layout.positions(order)?;
        Ok(Self {
            matrix: permute_factors(&self.matrix, self.layout.dims(), &perm),
            layout: self.layout.select(order)?,
        })
    }

    /// Partial trace keeping `keep` in the order listed.
    pub fn partial_trace<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        let pos = self.layout.positions(keep)?;
        Ok(Self {
            matrix: partial_trace_matrix(&self.matrix, self.layout.dims(), &pos),
            layout: self.layout.select(keep)?,
        })
    }

    /// Tensor with the identity on the factors of `full` not present here and
    /// reorder to `full`'s ordering.
    pub fn embed(&self, full: &TensorLayout) -> Result<Self> {
        let mut pos = Vec::with_capacity(self.layout.len());
        for (label, dim) in self.layout.iter() {
            let p = full.position(label)?;
            if full.dims()[p] != dim {
                return Err(Error::LayoutMismatch(format!("factor `{label}` has dimension {dim} vs {}", full.dims()[p])));
            }
            pos.push(p);
        }
        Ok(Self { matrix: embed_operator(&self.matrix, full.dims(), &pos), layout: full.clone() })
    }

    /// `a * self * a^dagger` for square `a` on the same space.
    pub fn sandwich(&self, a: &CMatrix) -> Result<Self> {
        if a.ncols() != self.side() || a.nrows() != self.side() {
            return Err(Error::DimensionMismatch { expected: self.side(), found: a.ncols() });
        }
        Ok(Self { matrix: hermitian_part(&(a * &self.matrix * a.adjoint())), layout: self.layout.clone() })
    }

    /// `a * self * a^dagger` landing on a different space.
    pub fn sandwich_into(&self, a: &CMatrix, layout: TensorLayout) -> Result<Self> {
        if a.ncols() != self.side() {
            return Err(Error::DimensionMismatch { expected: self.side(), found: a.ncols() });
        }
        if a.nrows() != layout.side() {
            return Err(Error::DimensionMismatch { expected: layout.side(), found: a.nrows() });
        }
        Ok(Self { matrix: hermitian_part(&(a * &self.matrix * a.adjoint())), layout })
    }

    /// Spectral function `sum_i f(lambda_i) |v_i><v_i|`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { matrix: self.eigh().map(f), layout: self.layout.clone() }
    }

    /// Pseudo-power on the support: eigenvalues at most `KERNEL_CUTOFF *
    /// lambda_max` (or negative) are mapped to zero.
    pub fn pseudo_power(&self, exponent: f64) -> Self {
        let e = self.eigh();
        let cut = KERNEL_CUTOFF * e.lambda_max().max(0.0);
        Self {
            matrix: e.map(|l| if l > cut && l > 0.0 { Float::powf(l, exponent) } else { 0.0 }),
            layout: self.layout.clone(),
        }
    }

    /// Projector onto the support (eigenvalues above the kernel cutoff).
    pub fn support_projector(&self) -> Self {
        let e = self.eigh();
        let cut = KERNEL_CUTOFF * e.lambda_max().max(0.0);
        Self { matrix: e.map(|l| if l > cut && l > 0.0 { 1.0 } else { 0.0 }), layout: self.layout.clone() }
    }

    /// Whether `self <= other` in Loewner order up to `tol * max(||other||, ||self||)`.
    pub fn loewner_leq(&self, other: &Self, tol: f64) -> Result<bool> {
        let diff = other.sub(self)?;
        let scale = other.schatten_norm(Schatten::Infinity).max(self.schatten_norm(Schatten::Infinity)).max(1e-300);
        Ok(diff.lambda_min() >= -tol * scale)
    }
}

// ---------------------------------------------------------------------------
// Density operators
// ---------------------------------------------------------------------------

/// Positive semidefinite operator. Constructed through [`DensityOperator::new`]
/// it is also subnormalized (trace at most `1 + 1e-9`).
#[derive(Clone, Debug)]
pub struct DensityOperator(HermitianOperator);

impl DensityOperator {
    /// Subnormalized state: PSD and trace at most `1 + 1e-9`.
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let d = Self::from_psd(op)?;
        if d.trace() > 1.0 + 1e-9 {
            return Err(Error::TraceTooLarge(d.trace()));
        }
        Ok(d)
    }

    /// PSD operator of any trace. Tiny negative eigenvalues are clipped.
    pub fn from_psd(op: HermitianOperator) -> Result<Self> {
        let e = op.eigh();
        let top = e.lambda_max().max(0.0);
        let low = e.lambda_min();
        if low >= 0.0 {
            return Ok(Self(op));
        }
        // small absolute floor so numerically-zero operators are accepted
        if low < -(PSD_TOLERANCE * top + 1e-15) {
            return Err(Error::NotPsd(low));
        }
        let layout = op.layout.clone();
        Ok(Self(HermitianOperator { matrix: e.map(|l| l.max(0.0)), layout }))
    }

    pub fn from_matrix(m: CMatrix, layout: TensorLayout) -> Result<Self> {
        Self::new(HermitianOperator::new(m, layout)?)
    }

    /// Pure state `|v><v|`.
    pub fn pure(v: &CVector, layout: TensorLayout) -> Result<Self> {
        Self::new(HermitianOperator::projector_onto(v, layout)?)
    }

    /// Maximally mixed state on `layout`.
    pub fn maximally_mixed(layout: TensorLayout) -> Self {
        let n = layout.side() as f64;
        Self(HermitianOperator::identity(layout).scale(1.0 / n))
    }

    pub fn diagonal(values: &[f64], layout: TensorLayout) -> Result<Self> {
        Self::from_psd(HermitianOperator::diagonal(values, layout)?)
    }

    pub fn as_operator(&self) -> &HermitianOperator {
        &self.0
    }

    pub fn into_operator(self) -> HermitianOperator {
        self.0
    }

    pub fn partial_trace<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        Ok(Self(self.0.partial_trace(keep)?))
    }

    pub fn permute<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        Ok(Self(self.0.permute(order)?))
    }

    pub fn tensor(&self, other: &Self) -> Result<Self> {
        Ok(Self(self.0.tensor(&other.0)?))
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(Error::Precondition("negative scale of a PSD operator".into()));
        }
        Ok(Self(self.0.scale(s)))
    }

    pub fn relabel(&self, layout: TensorLayout) -> Result<Self> {
        Ok(Self(self.0.relabel(layout)?))
    }

    /// `a rho a^dagger` on the same space.
    pub fn sandwich(&self, a: &CMatrix) -> Result<Self> {
        Self::from_psd(self.0.sandwich(a)?)
    }

    pub fn sandwich_into(&self, a: &CMatrix, layout: TensorLayout) -> Result<Self> {
        Self::from_psd(self.0.sandwich_into(a, layout)?)
    }

    /// Normalized copy (errors on the zero operator).
    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(Error::ZeroOperator);
        }
        Ok(Self(self.0.scale(1.0 / t)))
    }
}

impl core::ops::Deref for DensityOperator {
    type Target = HermitianOperator;
    fn deref(&self) -> &HermitianOperator {
        &self.0
    }
}

/// Fidelity `||sqrt(rho) sqrt(sigma)||_1`.
pub fn fidelity(rho: &HermitianOperator, sigma: &HermitianOperator) -> Result<f64> {
    if rho.layout.dims() != sigma.layout.dims() {
        return Err(Error::LayoutMismatch("fidelity arguments".into()));
    }
    let a = rho.pseudo_power(0.5);
    let b = sigma.pseudo_power(0.5);
    Ok(schatten_norm(&(a.matrix() * b.matrix()), Schatten::One))
}

/// Trace distance `||rho - sigma||_1` (no factor 1/2).
pub fn trace_distance(rho: &HermitianOperator, sigma: &HermitianOperator) -> Result<f64> {
    Ok(rho.sub(sigma)?.schatten_norm(Schatten::One))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_density, random_hermitian};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lay(dims: &[usize]) -> TensorLayout {
        let names = ["A", "B", "C", "D"];
        let f: Vec<(&str, usize)> = dims.iter().enumerate().map(|(i, &d)| (names[i], d)).collect();
        TensorLayout::new(&f).unwrap()
    }

    #[test]
    fn layout_rejects_duplicates_and_zero() {
        assert!(TensorLayout::new(&[("A", 2), ("A", 3)]).is_err());
        assert!(TensorLayout::new(&[("A", 0)]).is_err());
        assert_eq!(lay(&[2, 3, 4]).side(), 24);
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let s = 1.0 / 2f64.sqrt();
        let v = CVector::from_vec(vec![real(s), real(0.0), real(0.0), real(s)]);
        let rho = DensityOperator::pure(&v, lay(&[2, 2])).unwrap();
        let r = rho.partial_trace(&["A"]).unwrap();
        assert!((r.matrix() - identity(2).scale(0.5)).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_matches_index_oracle() {
        // direct element-wise oracle for Tr_B on A (x) B (x) C keeping A, C
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(2 * 3 * 2, &mut rng);
        let l = lay(&[2, 3, 2]);
        let op = HermitianOperator::new(h.clone(), l).unwrap();
        let pt = op.partial_trace(&["A", "C"]).unwrap();
        for a in 0..2 {
            for c in 0..2 {
                for a2 in 0..2 {
                    for c2 in 0..2 {
                        let mut acc = C64::new(0.0, 0.0);
                        for b in 0..3 {
                            acc += h[(a * 6 + b * 2 + c, a2 * 6 + b * 2 + c2)];
                        }
                        assert!((pt.matrix()[(a * 2 + c, a2 * 2 + c2)] - acc).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn permute_matches_kron_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = HermitianOperator::new(random_hermitian(2, &mut rng), lay(&[2])).unwrap();
        let b = HermitianOperator::new(random_hermitian(3, &mut rng), TensorLayout::single("B", 3).unwrap()).unwrap();
        let ab = a.tensor(&b).unwrap();
        let ba = b.tensor(&a).unwrap();
        let p = ab.permute(&["B", "A"]).unwrap();
        assert!((p.matrix() - ba.matrix()).norm() < 1e-14);
        assert_eq!(p.layout(), ba.layout());
    }

    #[test]
    fn embed_places_identity_on_missing_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let full = lay(&[2, 3, 2]);
        let b = HermitianOperator::new(random_hermitian(3, &mut rng), TensorLayout::single("B", 3).unwrap()).unwrap();
        let e = b.embed(&full).unwrap();
        let direct = kron(&kron(&identity(2), b.matrix()), &identity(2));
        assert!((e.matrix() - direct).norm() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_sqrt_of_diagonal_with_kernel() {
        let op = HermitianOperator::diagonal(&[0.25, 0.0, 1.0], lay(&[3])).unwrap();
        let p = op.pseudo_power(-0.5);
        let expect = [2.0, 0.0, 1.0];
        for i in 0..3 {
            assert!((p.matrix()[(i, i)].re - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn fidelity_of_orthogonal_and_identical_states() {
        let a = DensityOperator::diagonal(&[1.0, 0.0], lay(&[2])).unwrap();
        let b = DensityOperator::diagonal(&[0.0, 1.0], lay(&[2])).unwrap();
        assert!(fidelity(&a, &b).unwrap().abs() < 1e-14);
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!((trace_distance(&a, &b).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn psd_clipping_and_rejection() {
        let near = HermitianOperator::diagonal(&[1.0, -1e-12], lay(&[2])).unwrap();
        let d = DensityOperator::new(near).unwrap();
        assert!(d.lambda_min() >= 0.0);
        let bad = HermitianOperator::diagonal(&[1.0, -1e-6], lay(&[2])).unwrap();
        assert!(matches!(DensityOperator::new(bad), Err(Error::NotPsd(_))));
        let big = HermitianOperator::diagonal(&[1.0, 0.5], lay(&[2])).unwrap();
        assert!(matches!(DensityOperator::new(big), Err(Error::TraceTooLarge(_))));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = identity(2);
        m[(0, 1)] = real(1.0);
        assert!(matches!(HermitianOperator::new(m, lay(&[2])), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn span_projector_of_dependent_columns() {
        let cols = CMatrix::from_row_slice(3, 2, &[real(1.0), real(2.0), real(0.0), real(0.0), real(0.0), real(0.0)]);
        let p = span_projector(&cols, 1e-10);
        let mut expect = CMatrix::zeros(3, 3);
        expect[(0, 0)] = real(1.0);
        assert!((p - expect).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn schatten_norm_ordering(seed in any::<u64>(), d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = HermitianOperator::new(random_hermitian(d, &mut rng), lay(&[d])).unwrap();
            let n1 = h.schatten_norm(Schatten::One);
            let n2 = h.schatten_norm(Schatten::Two);
            let ni = h.schatten_norm(Schatten::Infinity);
            prop_assert!(ni <= n2 * (1.0 + 1e-12) + 1e-15);
            prop_assert!(n2 <= n1 * (1.0 + 1e-12) + 1e-15);
            // Hermitian route agrees with the SVD route
            prop_assert!((n1 - schatten_norm(h.matrix(), Schatten::One)).abs() < 1e-10 * n1.max(1.0));
        }

        #[test]
        fn trace_distance_triangle(seed in any::<u64>(), d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = lay(&[d]);
            let a = random_density(d, d, &mut rng).relabel(l.clone()).unwrap();
            let b = random_density(d, d, &mut rng).relabel(l.clone()).unwrap();
            let c = random_density(d, d, &mut rng).relabel(l).unwrap();
            let ab = trace_distance(&a, &b).unwrap();
            let bc = trace_distance(&b, &c).unwrap();
            let ac = trace_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab <= 2.0 + 1e-12);
        }

        #[test]
        fn partial_trace_preserves_trace(seed in any::<u64>(), da in 1usize..4, db in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(da * db, da * db, &mut rng).relabel(lay(&[da, db])).unwrap();
            let ra = rho.partial_trace(&["A"]).unwrap();
            prop_assert!((ra.trace() - rho.trace()).abs() < 1e-12);
            prop_assert!(ra.lambda_min() > -1e-12);
        }

        #[test]
        fn fidelity_in_unit_interval(seed in any::<u64>(), d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = lay(&[d]);
            let a = random_density(d, d, &mut rng).relabel(l.clone()).unwrap();
            let b = random_density(d, 1, &mut rng).relabel(l).unwrap();
            let f = fidelity(&a, &b).unwrap();
            prop_assert!(f >= -1e-12 && f <= 1.0 + 1e-9);
            // Fuchs-van de Graaf: 1 - F <= ||a-b||_1 / 2
            prop_assert!(1.0 - f <= trace_distance(&a, &b).unwrap() / 2.0 + 1e-9);
        }
    }
}
