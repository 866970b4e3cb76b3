//! Seeded random instance generators shared by the property suites, the
//! CLI's bound-check command, and tests.

use crate::linalg::SymMatrix;
use crate::matrix::Matrix;
use crate::snd::SupportPattern;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// Random symmetric positive definite matrix: G·Gᵀ/n + jitter·I.
pub fn random_spd(n: usize, jitter: f64, seed: u64) -> SymMatrix {
    let g = random_matrix(n, n, seed);
    let ggt = g.matmul(&g.transpose()).scale(1.0 / n as f64);
    let mut h = SymMatrix::symmetrize(&ggt);
    for i in 0..n {
        let v = h.get(i, i) + jitter;
        h.set(i, i, v);
    }
    h
}

/// Random symmetric positive semidefinite matrix of bounded rank, plus an
/// optional diagonal jitter.
pub fn random_low_rank_psd(n: usize, rank: usize, jitter: f64, seed: u64) -> SymMatrix {
    let g = random_matrix(n, rank.max(1), seed);
    let ggt = g.matmul(&g.transpose()).scale(1.0 / n as f64);
    let mut h = SymMatrix::symmetrize(&ggt);
    for i in 0..n {
        let v = h.get(i, i) + jitter;
        h.set(i, i, v);
    }
    h
}

/// SPD matrix with one dominant coordinate-aligned eigenvector, the regime
/// where the randomized Hadamard transform provably helps.
pub fn spiked_spd(n: usize, spike: f64, seed: u64) -> SymMatrix {
    let mut r = rng(seed);
    let axis = r.gen_range(0..n);
    let base = random_spd(n, 0.1, seed.wrapping_add(0x5eed));
    let mut h = base;
    let v = h.get(axis, axis) + spike;
    h.set(axis, axis, v);
    h
}

/// Random strictly lower triangular boolean mask.
pub fn random_mask(n: usize, density: f64, seed: u64) -> SupportPattern {
    let mut r = rng(seed);
    let mut p = SupportPattern::empty(n);
    for i in 0..n {
        for j in 0..i {
            if r.gen::<f64>() < density {
                p.set(i, j);
            }
        }
    }
    p
}

/// Random dense p.s.d. H of shape mn×mn together with its factor dims.
pub fn random_psd_full(m: usize, n: usize, seed: u64) -> SymMatrix {
    random_spd(m * n, 1e-3, seed)
}

/// Exact Kronecker product of two random SPD factors.
pub fn random_kron_psd(m: usize, n: usize, seed: u64) -> (SymMatrix, SymMatrix, SymMatrix) {
    let a = random_spd(m, 0.2, seed);
    let b = random_spd(n, 0.2, seed.wrapping_add(1));
    let h = SymMatrix::symmetrize(&crate::linalg::kron(a.as_matrix(), b.as_matrix()));
    (a, b, h)
}

/// Random p.s.d. mn×mn matrix with a clear spectral gap in its Van Loan
/// rearrangement: a Kronecker product plus p.s.d. noise at `noise_frac` of
/// its Frobenius norm. Alternating power iteration converges geometrically
/// on such instances.
pub fn random_psd_with_gap(m: usize, n: usize, noise_frac: f64, seed: u64) -> SymMatrix {
    let (_, _, base) = random_kron_psd(m, n, seed);
    let noise = random_spd(m * n, 1e-6, seed.wrapping_add(2));
    let scale = noise_frac * base.frob_norm() / noise.frob_norm();
    SymMatrix::symmetrize(&base.as_matrix().add(&noise.as_matrix().scale(scale)))
}
