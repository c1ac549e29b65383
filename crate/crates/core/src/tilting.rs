//! Tilting isometries, augmentation, tilted approximate intersections and
//! the augmentation-smoothing quantities.
//!
//! `M̂ = M ⊕ (⊕_{l_x} M(l_x)) ⊕ (⊕_{l_y} M(l_y))` is stored block-major: the
//! base block first, then the `L` copies of each party in order. Every tilt
//! puts amplitude `sqrt(1 - 2 eps)` on the base block once any coordinate is
//! active and `sqrt(eps)` on each active copy; with no active coordinate it
//! is the plain embedding into the base block.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{
    identity, kron, real, span_projector, CMatrix, DensityOperator, HermitianOperator, Schatten, TensorLayout,
};

/// Singular-value cutoff (relative) for spans of tilted images.
pub const SPAN_CUTOFF: f64 = 1e-10;

/// Base dimension plus tilt directions `(party, L)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiltedLayout {
    base: usize,
    parties: Vec<(String, usize)>,
}

impl TiltedLayout {
    pub fn new<S: AsRef<str>>(base: usize, parties: &[(S, usize)]) -> Result<Self> {
        if base == 0 {
            return Err(Error::InvalidLayout("base dimension must be positive".into()));
        }
        if parties.iter().any(|(_, l)| *l == 0) {
            return Err(Error::InvalidLayout("augmentation dimension must be at least 1".into()));
        }
        Ok(Self { base, parties: parties.iter().map(|(p, l)| (p.as_ref().to_string(), *l)).collect() })
    }

    /// Two parties `x`, `y` with the same `L`.
    pub fn two_party(base: usize, l: usize) -> Result<Self> {
        Self::new(base, &[("x", l), ("y", l)])
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn parties(&self) -> &[(String, usize)] {
        &self.parties
    }

    /// `|M̂| = |M| (1 + sum L)`.
    pub fn total(&self) -> usize {
        self.base * (1 + self.parties.iter().map(|(_, l)| l).sum::<usize>())
    }

    /// Offset of copy `l` (0-based) of party `p` inside `M̂`.
    pub fn offset(&self, party: usize, l: usize) -> usize {
        let before: usize = self.parties[..party].iter().map(|(_, l)| l).sum();
        self.base * (1 + before + l)
    }
}

/// Tilt parameter and the active copy (0-based) of each party, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltSpec {
    pub epsilon: f64,
    pub active: Vec<Option<usize>>,
}

impl TiltSpec {
    pub fn new(epsilon: f64, active: Vec<Option<usize>>) -> Self {
        Self { epsilon, active }
    }

    /// Two-party tilt with both coordinates active.
    pub fn both(epsilon: f64, lx: usize, ly: usize) -> Self {
        Self::new(epsilon, alloc::vec![Some(lx), Some(ly)])
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| a.is_some()).count()
    }
}

/// The tilting isometry as a `|M̂| x |M|` matrix.
pub fn tilt_isometry(spec: &TiltSpec, layout: &TiltedLayout) -> Result<CMatrix> {
    if spec.active.len() != layout.parties.len() {
        return Err(Error::Precondition(format!(
            "tilt has {} coordinates, layout has {} parties",
            spec.active.len(),
            layout.parties.len()
        )));
    }
    let nparties = layout.parties.len() as f64;
    if !(0.0..=1.0 / nparties.max(1.0)).contains(&spec.epsilon) {
        return Err(Error::InvalidEpsilon(spec.epsilon));
    }
    let m = layout.base;
    let mut t = CMatrix::zeros(layout.total(), m);
    let base_amp = if spec.active_count() == 0 { 1.0 } else { Float::sqrt(1.0 - nparties * spec.epsilon) };
    let side_amp = Float::sqrt(spec.epsilon);
    for i in 0..m {
        t[(i, i)] = real(base_amp);
    }
    for (p, a) in spec.active.iter().enumerate() {
        if let Some(l) = *a {
            if l >= layout.parties[p].1 {
                return Err(Error::Precondition(format!("copy {l} outside party {p}'s range")));
            }
            let off = layout.offset(p, l);
            for i in 0..m {
                t[(off + i, i)] = real(side_amp);
            }
        }
    }
    Ok(t)
}

/// `T M T^dagger` on `M̂` (a single factor labelled `label`).
pub fn tilt_apply(spec: &TiltSpec, layout: &TiltedLayout, m: &HermitianOperator, label: &str) -> Result<HermitianOperator> {
    if m.side() != layout.base {
        return Err(Error::DimensionMismatch { expected: layout.base, found: m.side() });
    }
    let t = tilt_isometry(spec, layout)?;
    m.sandwich_into(&t, TensorLayout::single(label, layout.total())?)
}

/// Augmented state `(1/L)^{(x) parties} (x) rho`, augmentation factors first.
pub fn augment<S: AsRef<str>>(rho: &DensityOperator, parties: &[(S, usize)]) -> Result<DensityOperator> {
    let mut acc: Option<DensityOperator> = None;
    for (label, l) in parties {
        if *l == 0 {
            return Err(Error::InvalidLayout("augmentation dimension must be at least 1".into()));
        }
        let mixed = DensityOperator::maximally_mixed(TensorLayout::single(label.as_ref(), *l)?);
        acc = Some(match acc {
            None => mixed,
            Some(a) => a.tensor(&mixed)?,
        });
    }
    match acc {
        None => Ok(rho.clone()),
        Some(a) => a.tensor(rho),
    }
}

/// Which display of the augmentation-smoothing lemma to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Average over `l'_y`, compared with the one-coordinate `x` tilt.
    TraceLy,
    /// Average over `l'_x`, compared with the one-coordinate `y` tilt.
    TraceLx,
    /// Average over both, compared with the untilted `sigma`.
    TraceBoth,
}

/// Coefficient matrix `C` on the block index of `M̂` such that the tilted
/// operator `T sigma T^dagger` equals `C (x) sigma`.
fn tilt_coefficients(spec: &TiltSpec, layout: &TiltedLayout) -> Result<CMatrix> {
    let one = TiltedLayout { base: 1, parties: layout.parties.clone() };
    let t = tilt_isometry(spec, &one)?;
    Ok(&t * t.adjoint())
}

/// `(lhs, bound)` for one display of the augmentation-smoothing lemma with
/// tilt parameter `eps^{1/4}` and fixed `l_x = l_y = 0`.
pub fn smoothing_defect(sigma: &HermitianOperator, l: usize, eps: f64, which: Reduction) -> Result<(f64, f64)> {
    if l == 0 {
        return Err(Error::Precondition("L must be at least 1".into()));
    }
    let layout = TiltedLayout::two_party(sigma.side(), l)?;
    let t = Float::powf(eps, 0.25);
    let blocks = 1 + 2 * l;
    let mut avg = CMatrix::zeros(blocks, blocks);
    let (reference, count) = match which {
        Reduction::TraceLy => {
            for ly in 0..l {
                avg += tilt_coefficients(&TiltSpec::both(t, 0, ly), &layout)?;
            }
            (tilt_coefficients(&TiltSpec::new(t, alloc::vec![Some(0), None]), &layout)?, l)
        }
        Reduction::TraceLx => {
            for lx in 0..l {
                avg += tilt_coefficients(&TiltSpec::both(t, lx, 0), &layout)?;
            }
            (tilt_coefficients(&TiltSpec::new(t, alloc::vec![None, Some(0)]), &layout)?, l)
        }
        Reduction::TraceBoth => {
            for lx in 0..l {
                for ly in 0..l {
                    avg += tilt_coefficients(&TiltSpec::both(t, lx, ly), &layout)?;
                }
            }
            (tilt_coefficients(&TiltSpec::new(t, alloc::vec![None, None]), &layout)?, l * l)
        }
    };
    let diff = avg.scale(1.0 / count as f64) - reference;
    // ||C (x) sigma||_inf = ||C||_inf ||sigma||_inf
    let lhs = crate::linalg::schatten_norm(&diff, Schatten::Infinity) * sigma.schatten_norm(Schatten::Infinity);
    let factor = if which == Reduction::TraceBoth { 8.0 } else { 4.0 };
    let bound = factor * Float::powf(eps, 0.125) / Float::sqrt(l as f64) * sigma.trace();
    Ok((lhs, bound))
}

/// Dense version of [`smoothing_defect`]'s left-hand side (for cross-checks).
pub fn smoothing_defect_dense(sigma: &HermitianOperator, l: usize, eps: f64, which: Reduction) -> Result<f64> {
    let layout = TiltedLayout::two_party(sigma.side(), l)?;
    let t = Float::powf(eps, 0.25);
    let label = "Mhat";
    let n = layout.total();
    let mut avg = CMatrix::zeros(n, n);
    let mut count = 0;
    let mut push = |spec: TiltSpec| -> Result<()> {
        avg += tilt_apply(&spec, &layout, sigma, label)?.into_matrix();
        count += 1;
        Ok(())
    };
    let reference = match which {
        Reduction::TraceLy => {
            for ly in 0..l {
                push(TiltSpec::both(t, 0, ly))?;
            }
            TiltSpec::new(t, alloc::vec![Some(0), None])
        }
        Reduction::TraceLx => {
            for lx in 0..l {
                push(TiltSpec::both(t, lx, 0))?;
            }
            TiltSpec::new(t, alloc::vec![None, Some(0)])
        }
        Reduction::TraceBoth => {
            for lx in 0..l {
                for ly in 0..l {
                    push(TiltSpec::both(t, lx, ly))?;
                }
            }
            TiltSpec::new(t, alloc::vec![None, None])
        }
    };
    let r = tilt_apply(&reference, &layout, sigma, label)?;
    Ok(crate::linalg::schatten_norm(&(avg.scale(1.0 / count as f64) - r.matrix()), Schatten::Infinity))
}

/// Exact `||rho_hat - rho||_1` for the full two-party tilt (parameter
/// `eps^{1/4}`) of the augmented state, both embedded in `L_X L_Y M̂`.
/// Every `(l_x, l_y)` block contributes identically, so one block suffices.
pub fn tilt_distance(rho: &DensityOperator, eps: f64) -> Result<f64> {
    let layout = TiltedLayout::two_party(rho.side(), 1)?;
    let t = Float::powf(eps, 0.25);
    let tilted = tilt_apply(&TiltSpec::both(t, 0, 0), &layout, rho, "Mhat")?;
    let plain = tilt_apply(&TiltSpec::new(t, alloc::vec![None, None]), &layout, rho, "Mhat")?;
    crate::linalg::trace_distance(&tilted, &plain)
}

/// The `eps`-tilted approximate intersection of three projectors on
/// `X Y M`, for the augmented space `L_X X L_Y Y M̂` with tilt `eps^{1/4}`.
///
/// For fixed `(l_x, l_y)` all complement images live in `X Y ⊗ (M ⊕ M(l_x)
/// ⊕ M(l_y))`, and the images for different `(l_x, l_y)` are orthogonal, so
/// the projector is the direct sum of `L^2` copies of one local projector.
#[derive(Clone, Debug)]
pub struct TiltedIntersection {
    /// Local complement-span projector on `XY (x) C^3 (x) M`.
    local_span: CMatrix,
    xy: usize,
    m: usize,
    l: usize,
    tilt: f64,
    rho: DensityOperator,
}

/// Local tilt on `XY (x) M -> XY (x) C^3 (x) M` with the given block amplitudes.
fn local_tilt(xy: usize, m: usize, amps: [f64; 3]) -> CMatrix {
    let mut coef = CMatrix::zeros(3, 1);
    for (b, a) in amps.iter().enumerate() {
        coef[(b, 0)] = real(*a);
    }
    // XY (x) [coef (x) I_M]
    kron(&identity(xy), &kron(&coef, &identity(m)))
}

/// Build the tilted intersection. `rho` lives on `X Y M` (layout order as
/// given, with `m_dim` the trailing `M` dimension); each projector must
/// capture at least `1 - sqrt(eps)` of `rho`.
pub fn tilted_intersection(
    rho: &DensityOperator,
    projectors: [&HermitianOperator; 3],
    m_dim: usize,
    l: usize,
    eps: f64,
) -> Result<TiltedIntersection> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidEpsilon(eps));
    }
    if l == 0 {
        return Err(Error::Precondition("L must be at least 1".into()));
    }
    let n = rho.side();
    if n % m_dim != 0 {
        return Err(Error::DimensionMismatch { expected: m_dim, found: n });
    }
    let xy = n / m_dim;
    let sq = Float::sqrt(eps);
    for (i, p) in projectors.iter().enumerate() {
        if p.side() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p.side() });
        }
        let captured = p.trace_product(rho.relabel(p.layout().clone())?.as_operator())?;
        if captured < (1.0 - sq) * rho.trace() - 1e-12 {
            return Err(Error::Precondition(format!(
                "projector {} captures {captured}, below 1 - sqrt(eps)",
                i + 1
            )));
        }
    }
    let t = Float::powf(eps, 0.25);
    let c = Float::sqrt(1.0 - 2.0 * t);
    let s = Float::sqrt(t);
    let tilts = [local_tilt(xy, m_dim, [c, s, 0.0]), local_tilt(xy, m_dim, [c, 0.0, s]), local_tilt(xy, m_dim, [c, s, s])];
    let mut cols: Vec<CMatrix> = Vec::new();
    for (p, tl) in projectors.iter().zip(&tilts) {
        let comp = identity(n) - p.matrix();
        cols.push(tl * comp);
    }
    let width: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut stacked = CMatrix::zeros(3 * n, width);
    let mut at = 0;
    for c in &cols {
        stacked.columns_mut(at, c.ncols()).copy_from(c);
        at += c.ncols();
    }
    let local_span = span_projector(&stacked, SPAN_CUTOFF);
    Ok(TiltedIntersection { local_span, xy, m: m_dim, l, tilt: t, rho: rho.clone() })
}

impl TiltedIntersection {
    /// Local projector `1 - span` on `XY (x) C^3 (x) M`.
    pub fn local_projector(&self) -> CMatrix {
        identity(3 * self.xy * self.m) - &self.local_span
    }

    /// `Tr[Pi_hat rho]` for the untilted augmented state embedded in `M̂`,
    /// i.e. the trace of `Pi_hat rho Pi_hat`.
    pub fn captured_untilted(&self) -> f64 {
        let emb = local_tilt(self.xy, self.m, [1.0, 0.0, 0.0]);
        let r = &emb * self.rho.matrix() * emb.adjoint();
        (self.local_projector() * r).trace().re
    }

    /// `Tr[Pi_hat rho_hat]` for the tilted augmented state.
    pub fn captured_tilted(&self) -> f64 {
        let c = Float::sqrt(1.0 - 2.0 * self.tilt);
        let s = Float::sqrt(self.tilt);
        let t = local_tilt(self.xy, self.m, [c, s, s]);
        let r = &t * self.rho.matrix() * t.adjoint();
        (self.local_projector() * r).trace().re
    }

    /// Lower bound `1 - 121 eps^{1/4}` on [`Self::captured_untilted`].
    pub fn guaranteed(&self) -> f64 {
        1.0 - 121.0 * self.tilt
    }

    /// Dense projector on `L_X X L_Y Y M̂` (factor order as listed), for
    /// small instances. `x_dim` splits the `XY` index into `X` and `Y`.
    pub fn dense(&self, x_dim: usize, max_side: usize) -> Result<CMatrix> {
        if self.xy % x_dim != 0 {
            return Err(Error::DimensionMismatch { expected: x_dim, found: self.xy });
        }
        let y_dim = self.xy / x_dim;
        let layout = TiltedLayout::two_party(self.m, self.l)?;
        let mhat = layout.total();
        let side = self.l * x_dim * self.l * y_dim * mhat;
        if side > max_side {
            return Err(Error::CapExceeded(format!("dense tilted projector side {side}")));
        }
        let span = &self.local_span;
        let mut out = identity(side);
        let idx = |lx: usize, x: usize, ly: usize, y: usize, j: usize| (((lx * x_dim + x) * self.l + ly) * y_dim + y) * mhat + j;
        for lx in 0..self.l {
            for ly in 0..self.l {
                let block_off = [0, layout.offset(0, lx), layout.offset(1, ly)];
                let map = |k: usize| {
                    let xy = k / (3 * self.m);
                    let b = (k / self.m) % 3;
                    let mi = k % self.m;
                    idx(lx, xy / y_dim, ly, xy % y_dim, block_off[b] + mi)
                };
                for j in 0..span.ncols() {
                    let gj = map(j);
                    for i in 0..span.nrows() {
                        out[(map(i), gj)] -= span[(i, j)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Two-block tilt `|x> -> sqrt(1 - eps^{1/4}) |x>|0> + eps^{1/8} |x>|1>`
/// as a `2d x d` isometry (the doubled space is `X (x) C^2`).
pub fn tilt_two_block_isometry(eps: f64, d: usize) -> Result<CMatrix> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let a = Float::sqrt(1.0 - Float::powf(eps, 0.25));
    let b = Float::powf(eps, 0.125);
    let mut t = CMatrix::zeros(2 * d, d);
    for i in 0..d {
        t[(2 * i, i)] = real(a);
        t[(2 * i + 1, i)] = real(b);
    }
    Ok(t)
}

/// Apply the two-block tilt to factor `label` of `m`; the factor is replaced
/// by `(label, hat)` with `hat` the 2-dimensional block register.
pub fn tilt_two_block(eps: f64, m: &HermitianOperator, label: &str, hat: &str) -> Result<HermitianOperator> {
    let layout = m.layout();
    let pos = layout.position(label)?;
    let d = layout.dims()[pos];
    let t = tilt_two_block_isometry(eps, d)?;
    let new_layout = layout.replace_factor(label, &[(label, d), (hat, 2)])?;
    let before: usize = layout.dims()[..pos].iter().product();
    let after: usize = layout.dims()[pos + 1..].iter().product();
    let full = kron(&kron(&identity(before), &t), &identity(after));
    m.sandwich_into(&full, new_layout)
}

/// Embed factor `label` into the untilted block of `X (x) C^2`.
pub fn embed_two_block(m: &HermitianOperator, label: &str, hat: &str) -> Result<HermitianOperator> {
    let layout = m.layout();
    let pos = layout.position(label)?;
    let d = layout.dims()[pos];
    let mut e = CMatrix::zeros(2 * d, d);
    for i in 0..d {
        e[(2 * i, i)] = real(1.0);
    }
    let new_layout = layout.replace_factor(label, &[(label, d), (hat, 2)])?;
    let before: usize = layout.dims()[..pos].iter().product();
    let after: usize = layout.dims()[pos + 1..].iter().product();
    m.sandwich_into(&kron(&kron(&identity(before), &e), &identity(after)), new_layout)
}

/// Smallest `L` meeting the asymmetric convex-split requirement
/// `sqrt(L) > max{4|F'_b||F'_r| / (eps^{3/8} 2^{D_y}), 4|F'_a||F'_r| / (eps^{3/8} 2^{D_x}), 8|F'_r| / eps^{3/8}}`.
pub fn augmentation_threshold(fa: f64, fb: f64, fr: f64, d_xm: f64, d_ym: f64, eps: f64) -> f64 {
    let e = Float::powf(eps, 0.375);
    let root = (4.0 * fb * fr / (e * Float::powf(2.0, d_ym)))
        .max(4.0 * fa * fr / (e * Float::powf(2.0, d_xm)))
        .max(8.0 * fr / e);
    Float::floor(root * root) + 1.0
}
