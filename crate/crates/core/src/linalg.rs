//! Symmetric factorizations and Kronecker utilities.
//!
//! Everything here is plain dense 64-bit arithmetic. The LDL and block-LDL
//! routines use the same left-looking accumulation pattern so that
//! `block_ldl` with g = 1 reproduces `ldl` bit-for-bit.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dense symmetric matrix. Storage keeps the two triangles exactly equal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: Matrix,
}

impl SymMatrix {
    /// Validates exact symmetry of the input.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..m.rows() {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::ShapeMismatch(format!(
                        "asymmetric entry at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SymMatrix { m })
    }

    /// (X + Xᵀ)/2, for accumulations that picked up floating-point skew.
    pub fn symmetrize(x: &Matrix) -> Self {
        assert!(x.is_square());
        let n = x.rows();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = x[(i, i)];
            for j in 0..i {
                let v = 0.5 * (x[(i, j)] + x[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    /// Fill from the lower triangle (i ≥ j); the upper mirror is implied.
    pub fn from_lower(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    pub fn eye(n: usize) -> Self {
        SymMatrix { m: Matrix::eye(n) }
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        SymMatrix::from_lower(n, |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.m.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[(i, j)] = v;
        self.m[(j, i)] = v;
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn frob_norm(&self) -> f64 {
        self.m.frob_norm()
    }

    /// H + reg·(tr(H)/n)·I, the diagonal regularization applied before
    /// factorizations. reg = 0 returns an unchanged copy.
    pub fn regularized(&self, reg: f64) -> SymMatrix {
        let n = self.n();
        let shift = reg * (self.trace() / n as f64);
        let mut out = self.clone();
        for i in 0..n {
            let v = out.get(i, i) + shift;
            out.set(i, i, v);
        }
        out
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { m: self.m.scale(s) }
    }
}

/// Unit lower triangular L and positive diagonal D with L·diag(D)·Lᵀ = H.
#[derive(Debug, Clone)]
pub struct LDLFactors {
    pub l: Matrix,
    pub d: Vec<f64>,
}

impl LDLFactors {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn trace_d(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn reconstruct(&self) -> Matrix {
        let n = self.n();
        let ld = Matrix::from_fn(n, n, |i, j| self.l[(i, j)] * self.d[j]);
        ld.matmul(&self.l.transpose())
    }
}

/// Block unit lower triangular L (identity diagonal blocks) and block
/// diagonal D with block size g.
#[derive(Debug, Clone)]
pub struct BlockLDLFactors {
    pub l: Matrix,
    pub d: Matrix,
    pub g: usize,
}

impl BlockLDLFactors {
    pub fn n(&self) -> usize {
        self.l.rows()
    }

    pub fn trace_d(&self) -> f64 {
        self.d.trace()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.l.matmul(&self.d).matmul(&self.l.transpose())
    }
}

/// Orthogonal Q and descending eigenvalues with H = Q·diag(λ)·Qᵀ.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub q: Matrix,
    pub lambda: Vec<f64>,
}

/// LDL decomposition of the regularized H. Left-looking; pivots must stay
/// strictly positive.
pub fn ldl(h: &SymMatrix, reg: f64) -> Result<LDLFactors> {
    let hr = h.regularized(reg);
    let n = hr.n();
    let mut l = Matrix::eye(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = hr.get(j, j);
        for k in 0..j {
            dj -= (l[(j, k)] * d[k]) * l[(j, k)];
        }
        if !(dj > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} = {dj:e} after regularization {reg:e}"
            )));
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = hr.get(i, j);
            for k in 0..j {
                s -= (l[(i, k)] * d[k]) * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(LDLFactors { l, d })
}

/// Solve X·B = S for X given the scalar LDL factors of symmetric B.
/// Reduces to plain division for 1×1 blocks.
fn solve_right(s: &Matrix, bf: &LDLFactors) -> Matrix {
    // Xᵀ solves B·Xᵀ = Sᵀ, column by column via L D Lᵀ.
    let g = bf.n();
    let rows = s.rows();
    let mut x = Matrix::zeros(rows, g);
    let mut y = vec![0.0; g];
    for r in 0..rows {
        for j in 0..g {
            let mut v = s[(r, j)];
            for k in 0..j {
                v -= bf.l[(j, k)] * y[k];
            }
            y[j] = v;
        }
        for j in 0..g {
            y[j] /= bf.d[j];
        }
        for j in (0..g).rev() {
            let mut v = y[j];
            for k in j + 1..g {
                v -= bf.l[(k, j)] * y[k];
            }
            y[j] = v;
            x[(r, j)] = v;
        }
    }
    x
}

/// Block LDL decomposition with g×g pivot blocks, by block Gaussian
/// elimination in the natural order. g = 1 coincides with [`ldl`] exactly.
pub fn block_ldl(h: &SymMatrix, g: usize, reg: f64) -> Result<BlockLDLFactors> {
    let n = h.n();
    if g == 0 || n % g != 0 {
        return Err(Error::BadBlockSize { g, n });
    }
    let hr = h.regularized(reg);
    let nb = n / g;
    let mut l = Matrix::eye(n);
    let mut d = Matrix::zeros(n, n);
    // Cached per-pivot scalar factors for the solves.
    let mut pivot_factors: Vec<LDLFactors> = Vec::with_capacity(nb);

    let blk = |m: &Matrix, bi: usize, bj: usize| m.block(bi * g, (bi + 1) * g, bj * g, (bj + 1) * g);

    for bj in 0..nb {
        let mut dj = blk(hr.as_matrix(), bj, bj);
        for k in 0..bj {
            let lk = blk(&l, bj, k);
            let dk = blk(&d, k, k);
            dj = dj.sub(&lk.matmul(&dk).matmul(&lk.transpose()));
        }
        let dj_sym = SymMatrix::symmetrize(&dj);
        let piv = ldl(&dj_sym, 0.0).map_err(|_| {
            Error::NotPositiveDefinite(format!("pivot block {bj} is singular or indefinite"))
        })?;
        d.set_block(bj * g, bj * g, dj_sym.as_matrix());
        for bi in bj + 1..nb {
            let mut s = blk(hr.as_matrix(), bi, bj);
            for k in 0..bj {
                let lik = blk(&l, bi, k);
                let dk = blk(&d, k, k);
                let ljk = blk(&l, bj, k);
                s = s.sub(&lik.matmul(&dk).matmul(&ljk.transpose()));
            }
            let lij = solve_right(&s, &piv);
            l.set_block(bi * g, bj * g, &lij);
        }
        pivot_factors.push(piv);
    }
    Ok(BlockLDLFactors { l, d, g })
}

/// Symmetric eigendecomposition by cyclic Jacobi sweeps. Eigenvalues are
/// returned in descending order with matching Q columns.
pub fn sym_eigen(h: &SymMatrix) -> Result<EigenDecomp> {
    let n = h.n();
    let mut a = h.as_matrix().clone();
    let mut q = Matrix::eye(n);
    let norm = a.frob_norm();
    if n <= 1 || norm == 0.0 {
        let lambda: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        return sorted_eigen(q, lambda);
    }
    let tol = 1e-14 * norm;
    let budget = 100 * n * n;
    let mut rotations = 0usize;

    loop {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = a[(p, r)];
                if apr.abs() <= 1e-18 * norm {
                    continue;
                }
                rotations += 1;
                if rotations > budget {
                    return Err(Error::NoConvergence(format!(
                        "jacobi eigensolver exceeded {budget} rotations at n={n}"
                    )));
                }
                let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and r of A.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akr = a[(k, r)];
                    a[(k, p)] = c * akp - s * akr;
                    a[(k, r)] = s * akp + c * akr;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let ark = a[(r, k)];
                    a[(p, k)] = c * apk - s * ark;
                    a[(r, k)] = s * apk + c * ark;
                }
                a[(p, r)] = 0.0;
                a[(r, p)] = 0.0;
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    let lambda: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    sorted_eigen(q, lambda)
}

fn sorted_eigen(q: Matrix, lambda: Vec<f64>) -> Result<EigenDecomp> {
    let n = lambda.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lambda[j].partial_cmp(&lambda[i]).unwrap());
    let lam: Vec<f64> = order.iter().map(|&i| lambda[i]).collect();
    let qs = Matrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok(EigenDecomp { q: qs, lambda: lam })
}

/// tr(H^{1/2}) = Σ √λᵢ, with eigenvalues below 1e-12·λ_max clamped to zero.
pub fn trace_sqrt(h: &SymMatrix) -> Result<f64> {
    let eig = sym_eigen(h)?;
    let lmax = eig.lambda.first().copied().unwrap_or(0.0).max(0.0);
    let clamp = 1e-12 * lmax;
    Ok(eig
        .lambda
        .iter()
        .map(|&l| if l <= clamp { 0.0 } else { l.sqrt() })
        .sum())
}

/// Kronecker product. Under row-major vec, vec(X)·(A ⊗ B) = vec(AᵀXB).
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = (a.rows(), a.cols());
    let (rb, cb) = (b.rows(), b.cols());
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for i1 in 0..ra {
        for j1 in 0..ca {
            let v = a[(i1, j1)];
            if v == 0.0 {
                continue;
            }
            for i2 in 0..rb {
                for j2 in 0..cb {
                    out[(i1 * rb + i2, j1 * cb + j2)] = v * b[(i2, j2)];
                }
            }
        }
    }
    out
}

/// ⟨A,B⟩_F / (‖A‖_F·‖B‖_F).
pub fn frob_cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    let na = a.frob_norm();
    let nb = b.frob_norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroMatrix("frob_cosine of a zero matrix".into()));
    }
    Ok(a.frob_dot(b) / (na * nb))
}
