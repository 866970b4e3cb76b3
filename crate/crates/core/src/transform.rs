//! Randomized Hadamard transform incoherence processing and incoherence
//! measurement. The RHT operator is U = H_n·diag(s) for a random sign vector
//! s; conjugating Hessian factors and transforming weights by paired RHTs
//! preserves spectra and proxy errors while flattening eigenvectors.

use crate::error::{Error, Result};
use crate::linalg::{ldl, sym_eigen, SymMatrix};
use crate::matrix::Matrix;
use crate::sketch::KronSketch;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// In-place fast Walsh-Hadamard transform, normalized so the operator is
/// orthogonal. Length must be a power of two.
pub fn fwht_normalized(x: &mut [f64]) -> Result<()> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut stride = 1;
    while stride < n {
        let mut i = 0;
        while i < n {
            for j in i..i + stride {
                let a = x[j];
                let b = x[j + stride];
                x[j] = a + b;
                x[j + stride] = a - b;
            }
            i += 2 * stride;
        }
        stride *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    for v in x.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

/// Dense normalized Hadamard matrix, entries ±1/√n.
pub fn hadamard(n: usize) -> Result<Matrix> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            scale
        } else {
            -scale
        }
    }))
}

/// Randomized Hadamard transform U = H_n·diag(signs).
#[derive(Debug, Clone)]
pub struct Rht {
    signs: Vec<f64>,
    pub seed: u64,
}

impl Rht {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Ok(Rht { signs, seed })
    }

    pub fn n(&self) -> usize {
        self.signs.len()
    }

    /// U x = H (s ⊙ x).
    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        for (v, s) in x.iter_mut().zip(&self.signs) {
            *v *= s;
        }
        fwht_normalized(x)
    }

    /// Uᵀ x = s ⊙ (H x).
    pub fn apply_transpose(&self, x: &mut [f64]) -> Result<()> {
        fwht_normalized(x)?;
        for (v, s) in x.iter_mut().zip(&self.signs) {
            *v *= s;
        }
        Ok(())
    }

    pub fn as_matrix(&self) -> Matrix {
        let n = self.n();
        let h = hadamard(n).expect("n validated at construction");
        Matrix::from_fn(n, n, |i, j| h[(i, j)] * self.signs[j])
    }

    /// U H Uᵀ for symmetric H.
    pub fn conjugate(&self, h: &SymMatrix) -> Result<SymMatrix> {
        let n = self.n();
        if h.n() != n {
            return Err(Error::ShapeMismatch(format!("RHT dim {n} vs matrix {}", h.n())));
        }
        let mut work = h.as_matrix().clone();
        // Columns: H ← H Uᵀ, i.e. transform each row by U.
        for i in 0..n {
            self.apply(work.row_mut(i))?;
        }
        // Rows: H ← U H.
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = work[(i, j)];
            }
            self.apply(&mut col)?;
            for i in 0..n {
                work[(i, j)] = col[i];
            }
        }
        Ok(SymMatrix::symmetrize(&work))
    }
}

/// Row and column transforms applied to a rounding problem, with the seeds
/// needed to reproduce them.
#[derive(Debug, Clone)]
pub struct IncoherencePair {
    pub u: Rht,
    pub v: Rht,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IncoherenceSeeds {
    pub row_seed: u64,
    pub col_seed: u64,
}

impl IncoherencePair {
    pub fn new(m: usize, n: usize, seeds: IncoherenceSeeds) -> Result<Self> {
        Ok(IncoherencePair {
            u: Rht::new(m, seeds.row_seed)?,
            v: Rht::new(n, seeds.col_seed)?,
        })
    }

    /// W' = U W Vᵀ.
    pub fn transform_weights(&self, w: &Matrix) -> Result<Matrix> {
        let (m, n) = (w.rows(), w.cols());
        if m != self.u.n() || n != self.v.n() {
            return Err(Error::ShapeMismatch("weight shape vs RHT dims".into()));
        }
        let mut out = w.clone();
        for i in 0..m {
            self.v.apply(out.row_mut(i))?;
        }
        let mut col = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                col[i] = out[(i, j)];
            }
            self.u.apply(&mut col)?;
            for i in 0..m {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    /// Uᵀ W' V, mapping transformed weights back.
    pub fn untransform_weights(&self, w: &Matrix) -> Result<Matrix> {
        let (m, n) = (w.rows(), w.cols());
        if m != self.u.n() || n != self.v.n() {
            return Err(Error::ShapeMismatch("weight shape vs RHT dims".into()));
        }
        let mut out = w.clone();
        for i in 0..m {
            self.v.apply_transpose(out.row_mut(i))?;
        }
        let mut col = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                col[i] = out[(i, j)];
            }
            self.u.apply_transpose(&mut col)?;
            for i in 0..m {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }
}

/// Incoherence-process a rounding problem: W' = U W Vᵀ, H_O' = U H_O Uᵀ,
/// H_I' = V H_I Vᵀ. Spectra and paired proxy errors are preserved.
pub fn incoherence_process(
    w: &Matrix,
    sketch: &KronSketch,
    seeds: IncoherenceSeeds,
) -> Result<(Matrix, KronSketch, IncoherencePair)> {
    let pair = IncoherencePair::new(w.rows(), w.cols(), seeds)?;
    let w_t = pair.transform_weights(w)?;
    let h_o = pair.u.conjugate(&sketch.h_o)?;
    let h_i = pair.v.conjugate(&sketch.h_i)?;
    let mut meta = sketch.meta.clone();
    meta.note = format!(
        "{}; incoherence-processed (row_seed={}, col_seed={})",
        meta.note, seeds.row_seed, seeds.col_seed
    );
    Ok((w_t, KronSketch::new(h_o, h_i, meta), pair))
}

/// Conjugate a dense layer Hessian by the paired transform, so quadratic
/// forms of transformed deltas match: vec(UΔVᵀ)·H'·vec(UΔVᵀ)ᵀ =
/// vec(Δ)·H·vec(Δ)ᵀ.
pub fn conjugate_fisher(
    h: &crate::sketch::FisherEstimate,
    pair: &IncoherencePair,
) -> Result<crate::sketch::FisherEstimate> {
    let (m, n) = (h.m(), h.n());
    if pair.u.n() != m || pair.v.n() != n {
        return Err(Error::ShapeMismatch("transform dims vs Hessian shape".into()));
    }
    let mn = m * n;
    let mut work = h.h().as_matrix().clone();
    // Right-multiply by (U ⊗ V)ᵀ: apply the paired transform to each row.
    for r in 0..mn {
        let row = crate::matrix::unvec(work.row(r), m, n)?;
        let t = pair.transform_weights(&row)?;
        work.row_mut(r).copy_from_slice(&t.vec());
    }
    // Left-multiply by (U ⊗ V): same on each column.
    let mut col = vec![0.0; mn];
    for c in 0..mn {
        for r in 0..mn {
            col[r] = work[(r, c)];
        }
        let t = pair.transform_weights(&crate::matrix::unvec(&col, m, n)?)?;
        let tv = t.vec();
        for r in 0..mn {
            work[(r, c)] = tv[r];
        }
    }
    Ok(crate::sketch::FisherEstimate::new(
        SymMatrix::symmetrize(&work),
        m,
        n,
        h.provenance.clone(),
    ))
}

/// Hessian incoherence μ = √n · max |Q_ij| for the computed eigenbasis.
/// Degenerate spectra make μ basis dependent; the value reported is for the
/// eigensolver's canonical Q.
pub fn incoherence_mu(h: &SymMatrix) -> Result<f64> {
    let eig = sym_eigen(h)?;
    Ok((h.n() as f64).sqrt() * eig.q.max_abs())
}

/// Weight incoherence μ = √(mn) · max|W_ij| / ‖W‖_F.
pub fn weight_mu(w: &Matrix) -> Result<f64> {
    let norm = w.frob_norm();
    if norm == 0.0 {
        return Err(Error::ZeroMatrix("weight_mu of zero matrix".into()));
    }
    Ok(((w.rows() * w.cols()) as f64).sqrt() * w.max_abs() / norm)
}

/// tr(D_O')·tr(D_I') / (tr(D_O)·tr(D_I)) for the processed and original
/// factor pairs; < 1 indicates the incoherence processing tightened the
/// trace part of the error bound.
pub fn trace_ratio_diagnostic(
    original: (&SymMatrix, &SymMatrix),
    processed: (&SymMatrix, &SymMatrix),
    reg: f64,
) -> Result<f64> {
    let d_o = ldl(original.0, reg)?.trace_d();
    let d_i = ldl(original.1, reg)?.trace_d();
    let d_o_p = ldl(processed.0, reg)?.trace_d();
    let d_i_p = ldl(processed.1, reg)?.trace_d();
    Ok((d_o_p * d_i_p) / (d_o * d_i))
}
