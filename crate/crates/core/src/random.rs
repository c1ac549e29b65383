//! Random instance generators: Ginibre matrices, Haar unitaries, random
//! states, distributions and channels.

use alloc::vec::Vec;

use nalgebra::linalg::QR;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::linalg::{c64, CMatrix, DensityOperator, HermitianOperator, TensorLayout, C64};

/// Complex Ginibre matrix with i.i.d. entries of unit variance.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let s = Float::sqrt(0.5);
    let mut m = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(i, j)] = c64(s * re, s * im);
        }
    }
    m
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(n, n, rng);
    (&g + g.adjoint()).scale(0.5)
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of `R`'s
/// diagonal absorbed into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let qr = QR::new(ginibre(d, d, rng));
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let z = r[(j, j)];
        let n = z.norm();
        let phase = if n > 0.0 { z / n } else { C64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar-random isometry `C^din -> C^dout` (first columns of a Haar unitary).
pub fn haar_isometry<R: Rng + ?Sized>(din: usize, dout: usize, rng: &mut R) -> CMatrix {
    assert!(din <= dout, "isometry needs din <= dout");
    haar_unitary(dout, rng).columns(0, din).into_owned()
}

/// Random density matrix of the given rank (induced measure), on a single
/// factor labelled `A`.
pub fn random_density<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> DensityOperator {
    let g = ginibre(d, rank.max(1), rng);
    let m = &g * g.adjoint();
    let t = crate::linalg::trace(&m).re;
    let layout = TensorLayout::single("A", d).expect("positive dimension");
    let op = HermitianOperator::new(m.scale(1.0 / t), layout).expect("Gram matrix is Hermitian");
    DensityOperator::new(op).expect("Gram matrix is PSD")
}

/// Random density on a given layout.
pub fn random_state_on<R: Rng + ?Sized>(layout: &TensorLayout, rank: usize, rng: &mut R) -> DensityOperator {
    random_density(layout.side(), rank, rng).relabel(layout.clone()).expect("same side")
}

/// Uniformly random point of the probability simplex.
pub fn random_probability<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Kraus operators of a random channel `C^din -> C^dout` with `env`
/// environment dimensions, from a Haar-random Stinespring isometry.
pub fn random_channel_kraus<R: Rng + ?Sized>(din: usize, dout: usize, env: usize, rng: &mut R) -> Vec<CMatrix> {
    let v = haar_isometry(din, dout * env, rng);
    // output index = o * env + k
    (0..env)
        .map(|k| CMatrix::from_fn(dout, din, |o, i| v[(o * env + k, i)]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..6 {
            let u = haar_unitary(d, &mut rng);
            assert!((u.adjoint() * &u - identity(d)).norm() < 1e-12);
        }
    }

    #[test]
    fn haar_first_moment_is_small() {
        // E[U] = 0 for Haar measure
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4000;
        let mut acc = CMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += haar_unitary(2, &mut rng);
        }
        assert!(acc.scale(1.0 / n as f64).norm() < 0.1);
    }

    #[test]
    fn random_channel_is_trace_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_channel_kraus(4, 2, 3, &mut rng);
        let s = k.iter().fold(CMatrix::zeros(4, 4), |a, m| a + m.adjoint() * m);
        assert!((s - identity(4)).norm() < 1e-12);
    }

    #[test]
    fn random_density_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_density(5, 2, &mut rng);
        assert!((r.trace() - 1.0).abs() < 1e-12);
        assert_eq!(r.eigenvalues().iter().filter(|&&l| l > 1e-12).count(), 2);
    }
}
