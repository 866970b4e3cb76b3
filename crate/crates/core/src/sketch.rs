//! Kronecker-factored Hessian sketches.
//!
//! The best Kronecker approximation of an mn×mn matrix is a rank-1 problem in
//! the rearranged m²×n² matrix, so `power_iterate_full` runs alternating
//! contractions against the current co-factors and `van_loan_optimal` solves
//! the rank-1 problem directly by eigendecomposition of the rearrangement's
//! Gram matrix. Both factor updates in one round use the previous round's
//! iterates, so one round from identity inits reproduces Sketch B's closed
//! form.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymMatrix};
use crate::matrix::{unvec, Matrix};
use crate::model::{sample_label, Dataset, LabelMode, ToyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DENSE_CAP: usize = 4096;

/// Where a dense Fisher estimate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExactEnumeration,
    MonteCarlo { samples: usize },
    TokenIndependent,
}

/// Dense mn×mn layer Hessian (toy scale only), with the layer shape it
/// factors over.
#[derive(Debug, Clone)]
pub struct FisherEstimate {
    h: SymMatrix,
    m: usize,
    n: usize,
    pub provenance: Provenance,
}

impl FisherEstimate {
    pub fn new(h: SymMatrix, m: usize, n: usize, provenance: Provenance) -> Self {
        assert_eq!(h.n(), m * n, "Fisher dimension must be mn");
        FisherEstimate { h, m, n, provenance }
    }

    pub fn h(&self) -> &SymMatrix {
        &self.h
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// vec(Δ)·H·vec(Δ)ᵀ under the row-major vec convention.
    pub fn quad_form(&self, delta: &Matrix) -> Result<f64> {
        if delta.rows() != self.m || delta.cols() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "delta {}x{} does not match layer {}x{}",
                delta.rows(),
                delta.cols(),
                self.m,
                self.n
            )));
        }
        let v = delta.vec();
        let h = self.h.as_matrix();
        let mn = v.len();
        let mut total = 0.0;
        for i in 0..mn {
            let mut acc = 0.0;
            for j in 0..mn {
                acc += h[(i, j)] * v[j];
            }
            total += v[i] * acc;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchMeta {
    pub method: String,
    pub iterations: usize,
    pub seed: u64,
    /// ‖H_O‖_F pushed into H_I at finalization; 1.0 while raw.
    pub h_o_scale: f64,
    pub normalized: bool,
    /// Expectation granularity and normalization notes.
    pub note: String,
}

impl SketchMeta {
    fn raw(method: &str, iterations: usize, seed: u64, note: &str) -> Self {
        SketchMeta {
            method: method.to_string(),
            iterations,
            seed,
            h_o_scale: 1.0,
            normalized: false,
            note: note.to_string(),
        }
    }
}

/// Pair (H_O m×m, H_I n×n) approximating the mn×mn layer Hessian as
/// H_O ⊗ H_I.
#[derive(Debug, Clone)]
pub struct KronSketch {
    pub h_o: SymMatrix,
    pub h_i: SymMatrix,
    pub meta: SketchMeta,
}

impl KronSketch {
    pub fn new(h_o: SymMatrix, h_i: SymMatrix, meta: SketchMeta) -> Self {
        KronSketch { h_o, h_i, meta }
    }

    /// Unfinalized sketch from explicit factors.
    pub fn from_factors(h_o: SymMatrix, h_i: SymMatrix) -> Self {
        KronSketch { h_o, h_i, meta: SketchMeta::raw("explicit", 0, 0, "") }
    }

    /// The LDLQ-equivalent sketch (I, H_1).
    pub fn ldlq(m: usize, h_1: SymMatrix) -> Self {
        KronSketch {
            h_o: SymMatrix::eye(m),
            h_i: h_1,
            meta: SketchMeta::raw("ldlq", 0, 0, "identity output factor, H_1 input factor"),
        }
    }

    pub fn identity(m: usize, n: usize) -> Self {
        KronSketch {
            h_o: SymMatrix::eye(m),
            h_i: SymMatrix::eye(n),
            meta: SketchMeta::raw("identity", 0, 0, "nearest-rounding baseline"),
        }
    }

    pub fn m(&self) -> usize {
        self.h_o.n()
    }

    pub fn n(&self) -> usize {
        self.h_i.n()
    }

    /// Dense H_O ⊗ H_I, toy scale only.
    pub fn dense(&self) -> Matrix {
        crate::linalg::kron(self.h_o.as_matrix(), self.h_i.as_matrix())
    }

    /// Symmetrize, clamp negative factor eigenvalues to zero, and push all
    /// scale into H_I so that ‖H_O‖_F = 1. Rounding output is invariant to
    /// this; it fixes a storage convention.
    pub fn finalize(self) -> Result<KronSketch> {
        let h_o = clamp_psd(&self.h_o)?;
        let h_i = clamp_psd(&self.h_i)?;
        let s = h_o.frob_norm();
        if s == 0.0 {
            return Err(Error::ZeroMatrix("finalize: H_O has zero norm".into()));
        }
        let mut meta = self.meta;
        meta.h_o_scale = s;
        meta.normalized = true;
        Ok(KronSketch { h_o: h_o.scale(1.0 / s), h_i: h_i.scale(s), meta })
    }
}

fn clamp_psd(h: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eigen(h)?;
    if eig.lambda.iter().all(|&l| l >= 0.0) {
        return Ok(h.clone());
    }
    let n = h.n();
    let mut rebuilt = Matrix::zeros(n, n);
    for (idx, &l) in eig.lambda.iter().enumerate() {
        if l <= 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                rebuilt[(i, j)] += l * eig.q[(i, idx)] * eig.q[(j, idx)];
            }
        }
    }
    Ok(SymMatrix::symmetrize(&rebuilt))
}

/// Van Loan rearrangement: R[(i·m+k), (j·n+l)] = H[(i·n+j), (k·n+l)], so that
/// H = A ⊗ B iff R = vec(A)·vec(B)ᵀ.
pub fn rearrange(h: &SymMatrix, m: usize, n: usize) -> Matrix {
    assert_eq!(h.n(), m * n);
    let hm = h.as_matrix();
    Matrix::from_fn(m * m, n * n, |r, c| {
        let (i, k) = (r / m, r % m);
        let (j, l) = (c / n, c % n);
        hm[(i * n + j, k * n + l)]
    })
}

/// Contraction of H against an outer-side matrix M (m×m), producing the
/// optimal-scale direction for H_I: out[j,l] = Σ_{i,k} M[i,k]·H[(i,j),(k,l)].
pub fn contract_inner(h: &SymMatrix, m: usize, n: usize, mat: &Matrix) -> Matrix {
    assert_eq!(h.n(), m * n);
    assert_eq!((mat.rows(), mat.cols()), (m, m));
    let hm = h.as_matrix();
    let mut out = Matrix::zeros(n, n);
    for i in 0..m {
        for k in 0..m {
            let w = mat[(i, k)];
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                for l in 0..n {
                    out[(j, l)] += w * hm[(i * n + j, k * n + l)];
                }
            }
        }
    }
    out
}

/// Contraction of H against an inner-side matrix M (n×n):
/// out[i,k] = Σ_{j,l} M[j,l]·H[(i,j),(k,l)].
pub fn contract_outer(h: &SymMatrix, m: usize, n: usize, mat: &Matrix) -> Matrix {
    assert_eq!(h.n(), m * n);
    assert_eq!((mat.rows(), mat.cols()), (n, n));
    let hm = h.as_matrix();
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for k in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                for l in 0..n {
                    acc += mat[(j, l)] * hm[(i * n + j, k * n + l)];
                }
            }
            out[(i, k)] = acc;
        }
    }
    out
}

/// ⟨H, H_O ⊗ H_I⟩ without forming the Kronecker product.
pub fn kron_inner(h: &FisherEstimate, h_o: &SymMatrix, h_i: &SymMatrix) -> f64 {
    let c = contract_inner(h.h(), h.m(), h.n(), h_o.as_matrix());
    c.frob_dot(h_i.as_matrix())
}

/// Alternating power iteration on the full dense Hessian from identity
/// inits. The first round updates both factors against the identities, so
/// iters = 1 reproduces the single-pass whole-gradient sketch exactly; later
/// rounds contract against the current co-factor, each half-step being the
/// least-squares optimal co-factor, which drives the pair to the best
/// Kronecker approximation.
pub fn power_iterate_full(h: &FisherEstimate, iters: usize) -> Result<KronSketch> {
    let (m, n) = (h.m(), h.n());
    if m * n > DENSE_CAP {
        return Err(Error::TooLarge(format!("power iteration on mn = {} > {DENSE_CAP}", m * n)));
    }
    let mut h_o = SymMatrix::eye(m);
    let mut h_i = SymMatrix::eye(n);
    for round in 0..iters {
        let no = h_o.frob_norm();
        let ni = h_i.frob_norm();
        if no < 1e-300 || ni < 1e-300 {
            return Err(Error::ZeroMatrix("power iteration factor norm underflow".into()));
        }
        if round == 0 {
            let new_i = contract_inner(h.h(), m, n, h_o.as_matrix()).scale(1.0 / (no * no));
            let new_o = contract_outer(h.h(), m, n, h_i.as_matrix()).scale(1.0 / (ni * ni));
            h_i = SymMatrix::symmetrize(&new_i);
            h_o = SymMatrix::symmetrize(&new_o);
        } else {
            let new_i = contract_inner(h.h(), m, n, h_o.as_matrix()).scale(1.0 / (no * no));
            h_i = SymMatrix::symmetrize(&new_i);
            let ni2 = h_i.frob_norm();
            if ni2 < 1e-300 {
                return Err(Error::ZeroMatrix("power iteration factor norm underflow".into()));
            }
            let new_o = contract_outer(h.h(), m, n, h_i.as_matrix()).scale(1.0 / (ni2 * ni2));
            h_o = SymMatrix::symmetrize(&new_o);
        }
    }
    Ok(KronSketch::new(
        h_o,
        h_i,
        SketchMeta::raw("powerfull", iters, 0, "alternating contraction from identity inits"),
    ))
}

/// Best Kronecker approximation in Frobenius norm: the leading singular pair
/// of the rearrangement, obtained from the eigendecomposition of the smaller
/// Gram matrix, then symmetrized.
pub fn van_loan_optimal(h: &FisherEstimate) -> Result<KronSketch> {
    let (m, n) = (h.m(), h.n());
    if m * n > DENSE_CAP {
        return Err(Error::TooLarge(format!("van loan on mn = {} > {DENSE_CAP}", m * n)));
    }
    let r = rearrange(&h.h().clone(), m, n);
    let (u, v, sigma) = if m <= n {
        let gram = SymMatrix::symmetrize(&r.matmul(&r.transpose()));
        let eig = sym_eigen(&gram)?;
        let u: Vec<f64> = (0..m * m).map(|i| eig.q[(i, 0)]).collect();
        let mut v = vec![0.0; n * n];
        for i in 0..m * m {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for j in 0..n * n {
                v[j] += r[(i, j)] * ui;
            }
        }
        let sigma = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return Err(Error::ZeroMatrix("rearrangement has no leading direction".into()));
        }
        let v: Vec<f64> = v.iter().map(|x| x / sigma).collect();
        (u, v, sigma)
    } else {
        let gram = SymMatrix::symmetrize(&r.transpose().matmul(&r));
        let eig = sym_eigen(&gram)?;
        let v: Vec<f64> = (0..n * n).map(|i| eig.q[(i, 0)]).collect();
        let mut u = vec![0.0; m * m];
        for i in 0..m * m {
            let mut acc = 0.0;
            for j in 0..n * n {
                acc += r[(i, j)] * v[j];
            }
            u[i] = acc;
        }
        let sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return Err(Error::ZeroMatrix("rearrangement has no leading direction".into()));
        }
        let u: Vec<f64> = u.iter().map(|x| x / sigma).collect();
        (u, v, sigma)
    };
    let mut a = unvec(&u, m, m)?;
    let mut b = unvec(&v, n, n)?;
    // Resolve the joint sign so the factors lean positive semidefinite.
    if a.trace() < 0.0 {
        a = a.scale(-1.0);
        b = b.scale(-1.0);
    }
    let h_o = SymMatrix::symmetrize(&a);
    let h_i = SymMatrix::symmetrize(&b.scale(sigma));
    Ok(KronSketch::new(
        h_o,
        h_i,
        SketchMeta::raw("vanloan", 0, 0, "leading singular pair of the rearrangement"),
    ))
}

/// H_1 = mean over tokens of uᵀu at the layer input.
pub fn input_hessian(model: &ToyModel, layer: usize, data: &Dataset) -> Result<SymMatrix> {
    let n = model.layer(layer).cols();
    let mut acc = Matrix::zeros(n, n);
    let mut count = 0usize;
    for x in data.tokens() {
        let tr = model.forward(x)?;
        let u = &tr.layer_inputs[layer];
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += u[i] * u[j];
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyData("input_hessian with no tokens".into()));
    }
    Ok(SymMatrix::symmetrize(&acc.scale(1.0 / count as f64)))
}

/// The LDLQ sketch (I, H_1) for a layer.
pub fn ldlq_sketch(model: &ToyModel, layer: usize, data: &Dataset) -> Result<KronSketch> {
    let m = model.layer(layer).rows();
    Ok(KronSketch::ldlq(m, input_hessian(model, layer, data)?))
}

/// Sketch A: power iteration on the token-independent Fisher, accumulated
/// per example. Initialized at (H_I, H_O) = (H_1, I); `iters` full rounds,
/// both updates in a round against the previous round's factors.
pub fn sketch_a(
    model: &ToyModel,
    layer: usize,
    data: &Dataset,
    iters: usize,
    seed: u64,
    labels: LabelMode,
) -> Result<KronSketch> {
    let w = model.layer(layer);
    let (m, n) = (w.rows(), w.cols());
    let count = data.token_count();
    if count == 0 {
        return Err(Error::EmptyData("sketch_a with no tokens".into()));
    }
    let mut h_i = input_hessian(model, layer, data)?;
    let mut h_o = SymMatrix::eye(m);
    for round in 0..iters {
        let no = h_o.frob_norm();
        let ni = h_i.frob_norm();
        if no < 1e-300 || ni < 1e-300 {
            return Err(Error::ZeroMatrix("sketch_a factor norm underflow".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round as u64).wrapping_mul(0x9E37_79B9));
        let mut acc_i = Matrix::zeros(n, n);
        let mut acc_o = Matrix::zeros(m, m);
        for x in data.tokens() {
            let tr = model.forward(x)?;
            let u = &tr.layer_inputs[layer];
            let g = match labels {
                LabelMode::Exact => model.output_curvature(layer, &tr),
                LabelMode::MonteCarlo => {
                    let label = sample_label(&tr.probs, &mut rng);
                    let gv = model.output_grad(layer, &tr, label);
                    Matrix::from_fn(m, m, |i, j| gv[i] * gv[j])
                }
            };
            let wi = g.frob_dot(h_o.as_matrix());
            for i in 0..n {
                for j in 0..n {
                    acc_i[(i, j)] += wi * u[i] * u[j];
                }
            }
            let mut wo = 0.0;
            for i in 0..n {
                for j in 0..n {
                    wo += h_i.get(i, j) * u[i] * u[j];
                }
            }
            acc_o = acc_o.add(&g.scale(wo));
        }
        let new_i = SymMatrix::symmetrize(&acc_i.scale(1.0 / (count as f64 * no * no)));
        let new_o = SymMatrix::symmetrize(&acc_o.scale(1.0 / (count as f64 * ni * ni)));
        if new_i.frob_norm() == 0.0 || new_o.frob_norm() == 0.0 {
            return Err(Error::ZeroMatrix(
                "sketch_a update vanished (zero output gradients)".into(),
            ));
        }
        h_i = new_i;
        h_o = new_o;
    }
    Ok(KronSketch::new(
        h_o,
        h_i,
        SketchMeta::raw(
            "a",
            iters,
            seed,
            "token-independent expectation, one dataset element per token",
        ),
    ))
}

/// Sketch B: one power-iteration round on the real Fisher from identity
/// inits, computed from whole-sequence gradients in a single pass:
/// H_I = E[∇ᵀ∇]/m, H_O = E[∇∇ᵀ]/n.
pub fn sketch_b(
    model: &ToyModel,
    layer: usize,
    data: &Dataset,
    seed: u64,
    labels: LabelMode,
) -> Result<KronSketch> {
    let w = model.layer(layer);
    let (m, n) = (w.rows(), w.cols());
    if data.sequences.is_empty() {
        return Err(Error::EmptyData("sketch_b with no sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc_i = Matrix::zeros(n, n);
    let mut acc_o = Matrix::zeros(m, m);
    for seq in &data.sequences {
        match labels {
            LabelMode::MonteCarlo => {
                let mut grad = Matrix::zeros(m, n);
                for x in seq {
                    let tr = model.forward(x)?;
                    let label = sample_label(&tr.probs, &mut rng);
                    let gv = model.output_grad(layer, &tr, label);
                    let u = &tr.layer_inputs[layer];
                    for i in 0..m {
                        for j in 0..n {
                            grad[(i, j)] += gv[i] * u[j];
                        }
                    }
                }
                acc_i = acc_i.add(&grad.transpose().matmul(&grad));
                acc_o = acc_o.add(&grad.matmul(&grad.transpose()));
            }
            LabelMode::Exact => {
                // Label-exact expectation of the per-sequence outer products:
                // cross-token terms vanish (independent labels, zero-mean
                // scores), leaving tr(G)·uuᵀ and ‖u‖²·G per token.
                for x in seq {
                    let tr = model.forward(x)?;
                    let g = model.output_curvature(layer, &tr);
                    let u = &tr.layer_inputs[layer];
                    let tr_g = g.trace();
                    let u_sq: f64 = u.iter().map(|v| v * v).sum();
                    for i in 0..n {
                        for j in 0..n {
                            acc_i[(i, j)] += tr_g * u[i] * u[j];
                        }
                    }
                    acc_o = acc_o.add(&g.scale(u_sq));
                }
            }
        }
    }
    let s = data.sequences.len() as f64;
    let h_i = SymMatrix::symmetrize(&acc_i.scale(1.0 / (s * m as f64)));
    let h_o = SymMatrix::symmetrize(&acc_o.scale(1.0 / (s * n as f64)));
    Ok(KronSketch::new(
        h_o,
        h_i,
        SketchMeta::raw(
            "b",
            1,
            seed,
            "one dataset element = one sequence gradient; H_I /= m, H_O /= n",
        ),
    ))
}

/// Sketch diagnostics against a dense Hessian.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub cosine: f64,
    /// ⟨H, H_O⊗H_I⟩ / (‖H_O‖‖H_I‖), the ‖H‖-free quantity.
    pub normalized_cosine: f64,
    pub frob_residual: f64,
    pub mu_o: f64,
    pub mu_i: f64,
    pub rank_o: usize,
    pub rank_i: usize,
}

/// Numerical rank: eigenvalues above 1e-6·λ_max.
pub fn numerical_rank(h: &SymMatrix) -> Result<usize> {
    let eig = sym_eigen(h)?;
    let lmax = eig.lambda.first().copied().unwrap_or(0.0).abs();
    if lmax == 0.0 {
        return Ok(0);
    }
    Ok(eig.lambda.iter().filter(|&&l| l > 1e-6 * lmax).count())
}

pub fn sketch_quality(h: &FisherEstimate, s: &KronSketch) -> Result<QualityReport> {
    if h.m() != s.m() || h.n() != s.n() {
        return Err(Error::ShapeMismatch("sketch shape does not match Hessian".into()));
    }
    let nh = h.h().frob_norm();
    let no = s.h_o.frob_norm();
    let ni = s.h_i.frob_norm();
    if nh == 0.0 || no == 0.0 || ni == 0.0 {
        return Err(Error::ZeroMatrix("sketch_quality on zero matrices".into()));
    }
    let inner = kron_inner(h, &s.h_o, &s.h_i);
    let cosine = inner / (nh * no * ni);
    let normalized_cosine = inner / (no * ni);
    let resid_sq = (nh * nh - 2.0 * inner + no * no * ni * ni).max(0.0);
    Ok(QualityReport {
        cosine,
        normalized_cosine,
        frob_residual: resid_sq.sqrt(),
        mu_o: crate::transform::incoherence_mu(&s.h_o)?,
        mu_i: crate::transform::incoherence_mu(&s.h_i)?,
        rank_o: numerical_rank(&s.h_o)?,
        rank_i: numerical_rank(&s.h_i)?,
    })
}

/// GuidedQuant's per-group input Hessians derived from the dense H: the
/// diagonal n×n blocks averaged over the output channels in each group.
pub fn group_input_hessians(h: &FisherEstimate, groups: usize) -> Result<Vec<SymMatrix>> {
    let (m, n) = (h.m(), h.n());
    if groups == 0 || m % groups != 0 {
        return Err(Error::BadBlockSize { g: groups, n: m });
    }
    let rows_per = m / groups;
    let hm = h.h().as_matrix();
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut acc = Matrix::zeros(n, n);
        for r in 0..rows_per {
            let i = g * rows_per + r;
            for a in 0..n {
                for b in 0..n {
                    acc[(a, b)] += hm[(i * n + a, i * n + b)];
                }
            }
        }
        out.push(SymMatrix::symmetrize(&acc.scale(1.0 / rows_per as f64)));
    }
    Ok(out)
}
