//! Adaptive rounding algorithms.
//!
//! `ldlq` is the input-side fixed point W = Q(W* + (W*−W)(L₁−I)). `yaqa_round`
//! generalizes it to a Kronecker sketch H_O ⊗ H_I with the two-sided update
//! W = Q(W* + L_O′ᵀΔL_I′ + L_O′ᵀΔ + ΔL_I′), L′ = L − I. `vec_ldlq_oracle`
//! runs the flattened fixed point against the dense LDL of an arbitrary
//! mn×mn sketch and is the ground truth the structured algorithms are tested
//! against. `yaqa_round_wavefront` evaluates the same fixed point in a single
//! scheduled pass over anti-diagonal tiles from the bottom-right corner.

use crate::error::{Error, Result};
use crate::linalg::{block_ldl, ldl, SymMatrix};
use crate::matrix::{unvec, Matrix};
use crate::quantize::{quantize_with_scales, scale_map, QuantizedWeights, QuantizerSpec, ScaleMap};
use crate::sketch::KronSketch;

/// A weight matrix to round, the Kronecker sketch to round against, the
/// quantizer, and the diagonal regularization for the factor LDLs.
#[derive(Debug, Clone)]
pub struct RoundingProblem {
    pub w_star: Matrix,
    pub sketch: KronSketch,
    pub spec: QuantizerSpec,
    pub reg: f64,
    pub seed: u64,
}

impl RoundingProblem {
    pub fn new(w_star: Matrix, sketch: KronSketch, spec: QuantizerSpec, reg: f64, seed: u64) -> Self {
        RoundingProblem { w_star, sketch, spec, reg, seed }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let (m, n) = (self.w_star.rows(), self.w_star.cols());
        if self.sketch.m() != m || self.sketch.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "sketch ({}, {}) does not match weights {}x{}",
                self.sketch.m(),
                self.sketch.n(),
                m,
                n
            )));
        }
        self.spec.validate()?;
        Ok((m, n))
    }
}

/// Output of a rounding run. `proxy_error` is tr(ΔᵀH_OΔH_I) measured against
/// the regularized factors actually used for the feedback; `converged` means
/// one more sweep would leave the result unchanged.
#[derive(Debug, Clone)]
pub struct RoundingResult {
    pub w_hat: QuantizedWeights,
    pub sweeps: usize,
    pub proxy_error: f64,
    pub converged: bool,
}

/// tr(ΔᵀH_OΔH_I) for Δ = W* − Ŵ.
pub fn proxy_error(w_star: &Matrix, w_hat: &Matrix, h_o: &SymMatrix, h_i: &SymMatrix) -> Result<f64> {
    let (m, n) = (w_star.rows(), w_star.cols());
    if (w_hat.rows(), w_hat.cols()) != (m, n) || h_o.n() != m || h_i.n() != n {
        return Err(Error::ShapeMismatch("proxy_error operand shapes".into()));
    }
    let delta = w_star.sub(w_hat);
    let p = h_o.as_matrix().matmul(&delta).matmul(h_i.as_matrix());
    Ok(delta.frob_dot(&p))
}

/// Shared synchronous fixed-point loop: Ŵ₀ = Q(W*), then
/// Ŵ ← Q(W* + L_O′ᵀΔL_I′ + L_O′ᵀΔ + ΔL_I′) until the codes stop changing.
/// `budget` caps the number of applications of the update map.
fn fixed_point_round(
    w_star: &Matrix,
    l_o_prime: &Matrix,
    l_i_prime: &Matrix,
    spec: &QuantizerSpec,
    scales: &ScaleMap,
    seed: u64,
    row_offset: usize,
    budget: usize,
) -> Result<(QuantizedWeights, usize, bool)> {
    let l_o_t = l_o_prime.transpose();
    let mut w_hat = quantize_with_scales(w_star, scales, spec, seed, row_offset);
    let mut sweeps = 1usize;
    loop {
        let delta = w_star.sub(&w_hat.values);
        let lo_d = l_o_t.matmul(&delta);
        let feedback = lo_d
            .matmul(l_i_prime)
            .add(&lo_d)
            .add(&delta.matmul(l_i_prime));
        let target = w_star.add(&feedback);
        let next = quantize_with_scales(&target, scales, spec, seed, row_offset);
        if next.codes() == w_hat.codes() {
            return Ok((next, sweeps, true));
        }
        w_hat = next;
        sweeps += 1;
        if sweeps > budget {
            return Err(Error::NoConvergence(format!(
                "fixed point still changing after {budget} sweeps; quantizer may not be a fixed map"
            )));
        }
    }
}

fn strictly_lower_part(l: &Matrix) -> Matrix {
    let n = l.rows();
    Matrix::from_fn(n, n, |i, j| if i > j { l[(i, j)] } else { 0.0 })
}

/// LDLQ: the H_O = I special case, feedback along input channels only.
pub fn ldlq(problem: &RoundingProblem) -> Result<RoundingResult> {
    let (m, n) = problem.validate()?;
    let eye = Matrix::eye(m);
    if problem.sketch.h_o.as_matrix() != &eye {
        return Err(Error::ShapeMismatch("ldlq requires H_O = I".into()));
    }
    let h_i_reg = problem.sketch.h_i.regularized(problem.reg);
    let factors = ldl(&problem.sketch.h_i, problem.reg)?;
    let l_i_prime = strictly_lower_part(&factors.l);
    let l_o_prime = Matrix::zeros(m, m);
    let scales = scale_map(&problem.w_star, &problem.spec)?;
    let (w_hat, sweeps, converged) = fixed_point_round(
        &problem.w_star,
        &l_o_prime,
        &l_i_prime,
        &problem.spec,
        &scales,
        problem.seed,
        0,
        n + 1,
    )?;
    let proxy = proxy_error(&problem.w_star, &w_hat.values, &SymMatrix::eye(m), &h_i_reg)?;
    Ok(RoundingResult { w_hat, sweeps, proxy_error: proxy, converged })
}

/// YAQA rounding: synchronous fixed-point sweeps with two-sided feedback
/// from the (block-)LDL factors of the regularized sketch.
pub fn yaqa_round(problem: &RoundingProblem) -> Result<RoundingResult> {
    let (m, n) = problem.validate()?;
    let (g_x, g_y) = problem.spec.block;
    if g_x == 0 || m % g_x != 0 {
        return Err(Error::BadBlockSize { g: g_x, n: m });
    }
    if g_y == 0 || n % g_y != 0 {
        return Err(Error::BadBlockSize { g: g_y, n });
    }
    let h_o_reg = problem.sketch.h_o.regularized(problem.reg);
    let h_i_reg = problem.sketch.h_i.regularized(problem.reg);
    let f_o = block_ldl(&problem.sketch.h_o, g_x, problem.reg)?;
    let f_i = block_ldl(&problem.sketch.h_i, g_y, problem.reg)?;
    let l_o_prime = f_o.l.sub(&Matrix::eye(m));
    let l_i_prime = f_i.l.sub(&Matrix::eye(n));
    let scales = scale_map(&problem.w_star, &problem.spec)?;
    let (w_hat, sweeps, converged) = fixed_point_round(
        &problem.w_star,
        &l_o_prime,
        &l_i_prime,
        &problem.spec,
        &scales,
        problem.seed,
        0,
        m + n,
    )?;
    let proxy = proxy_error(&problem.w_star, &w_hat.values, &h_o_reg, &h_i_reg)?;
    Ok(RoundingResult { w_hat, sweeps, proxy_error: proxy, converged })
}

/// Single-pass wavefront schedule: g_x×g_y tiles visited along anti-diagonals
/// from the bottom-right corner, each tile quantized once with feedback
/// restricted to already-finalized tiles. Matches `yaqa_round`'s fixed point
/// entry for entry under a deterministic quantizer.
pub fn yaqa_round_wavefront(problem: &RoundingProblem) -> Result<RoundingResult> {
    let (m, n) = problem.validate()?;
    let (g_x, g_y) = problem.spec.block;
    if g_x == 0 || m % g_x != 0 {
        return Err(Error::BadBlockSize { g: g_x, n: m });
    }
    if g_y == 0 || n % g_y != 0 {
        return Err(Error::BadBlockSize { g: g_y, n });
    }
    let h_o_reg = problem.sketch.h_o.regularized(problem.reg);
    let h_i_reg = problem.sketch.h_i.regularized(problem.reg);
    let f_o = block_ldl(&problem.sketch.h_o, g_x, problem.reg)?;
    let f_i = block_ldl(&problem.sketch.h_i, g_y, problem.reg)?;
    let l_o_prime = f_o.l.sub(&Matrix::eye(m));
    let l_i_prime = f_i.l.sub(&Matrix::eye(n));
    let scales = scale_map(&problem.w_star, &problem.spec)?;
    let clamp = problem.spec.clamp_range();
    let w_star = &problem.w_star;

    let mb = m / g_x;
    let nb = n / g_y;
    let mut values = Matrix::zeros(m, n);
    let mut codes = vec![0i64; m * n];
    for wave in (0..mb + nb - 1).rev() {
        // Tiles (jm, jn) with jm + jn == wave are mutually independent.
        let jm_lo = wave.saturating_sub(nb - 1);
        let jm_hi = wave.min(mb - 1);
        for jm in jm_lo..=jm_hi {
            let jn = wave - jm;
            let (r0, r1) = (jm * g_x, (jm + 1) * g_x);
            let (c0, c1) = (jn * g_y, (jn + 1) * g_y);
            // Δ over the trailing slices; unfinalized tiles hold Ŵ = 0 there
            // and are annihilated by the strictly-lower factor structure.
            let delta_tail = w_star
                .block(r0, m, c0, n)
                .sub(&values.block(r0, m, c0, n));
            let delta_rows = w_star.block(r0, m, c0, c1).sub(&values.block(r0, m, c0, c1));
            let delta_cols = w_star.block(r0, r1, c0, n).sub(&values.block(r0, r1, c0, n));
            let lo_t = l_o_prime.block(r0, m, r0, r1).transpose();
            let li = l_i_prime.block(c0, n, c0, c1);
            let t1 = lo_t.matmul(&delta_tail).matmul(&li);
            let t2 = lo_t.matmul(&delta_rows);
            let t3 = delta_cols.matmul(&li);
            let target = w_star.block(r0, r1, c0, c1).add(&t1).add(&t2).add(&t3);
            for bi in 0..g_x {
                for bj in 0..g_y {
                    let (i, j) = (r0 + bi, c0 + bj);
                    let s = scales.at(i, j);
                    let code = crate::quantize::quantize_entry(
                        target[(bi, bj)],
                        s,
                        clamp,
                        problem.spec.mode,
                        problem.seed,
                        i,
                        j,
                    );
                    codes[i * n + j] = code;
                    values[(i, j)] = code as f64 * s;
                }
            }
        }
    }
    let w_hat = QuantizedWeights::from_parts(m, n, codes, scales, values);
    let proxy = proxy_error(&problem.w_star, &w_hat.values, &h_o_reg, &h_i_reg)?;
    Ok(RoundingResult { w_hat, sweeps: mb + nb - 1, proxy_error: proxy, converged: true })
}

/// Brute-force oracle: the flattened fixed point against the dense LDL
/// of an arbitrary mn×mn sketch. O(m²n²) per sweep by construction.
pub fn vec_ldlq_oracle(
    w_star: &Matrix,
    h_tilde: &SymMatrix,
    spec: &QuantizerSpec,
    reg: f64,
    seed: u64,
) -> Result<RoundingResult> {
    let (m, n) = (w_star.rows(), w_star.cols());
    let mn = m * n;
    if mn > 4096 {
        return Err(Error::TooLarge(format!("vec oracle on mn = {mn} > 4096")));
    }
    if h_tilde.n() != mn {
        return Err(Error::ShapeMismatch(format!(
            "sketch dim {} != mn = {mn}",
            h_tilde.n()
        )));
    }
    spec.validate()?;
    let h_reg = h_tilde.regularized(reg);
    let factors = ldl(h_tilde, reg)?;
    let l_prime = strictly_lower_part(&factors.l);
    let scales = scale_map(w_star, spec)?;
    let budget = mn + 1;

    let quantize_flat = |target: &Matrix| -> QuantizedWeights {
        quantize_with_scales(target, &scales, spec, seed, 0)
    };
    let mut w_hat = quantize_flat(w_star);
    let mut sweeps = 1usize;
    let (proxy, converged) = loop {
        let delta = unvec(&w_star.sub(&w_hat.values).vec(), 1, mn)?;
        let feedback = delta.matmul(&l_prime);
        let flat_target = unvec(
            &w_star
                .vec()
                .iter()
                .zip(feedback.data())
                .map(|(a, b)| a + b)
                .collect::<Vec<f64>>(),
            m,
            n,
        )?;
        let next = quantize_flat(&flat_target);
        if next.codes() == w_hat.codes() {
            let dv = unvec(&w_star.sub(&next.values).vec(), 1, mn)?;
            let hv = dv.matmul(h_reg.as_matrix());
            let proxy = dv.frob_dot(&hv);
            w_hat = next;
            break (proxy, true);
        }
        w_hat = next;
        sweeps += 1;
        if sweeps > budget {
            return Err(Error::NoConvergence(format!(
                "vec oracle still changing after {budget} sweeps"
            )));
        }
    };
    Ok(RoundingResult { w_hat, sweeps, proxy_error: proxy, converged })
}

/// GuidedQuant-style rounding: `groups` contiguous output-channel groups,
/// each running LDLQ with its own n×n input Hessian. Equivalent to the vec
/// oracle on the block-diagonal assembly of the per-row blocks.
pub fn guidedquant_round(
    w_star: &Matrix,
    blocks: &[SymMatrix],
    spec: &QuantizerSpec,
    reg: f64,
    seed: u64,
) -> Result<RoundingResult> {
    let (m, n) = (w_star.rows(), w_star.cols());
    let g = blocks.len();
    if g == 0 || m % g != 0 {
        return Err(Error::BadBlockSize { g, n: m });
    }
    for b in blocks {
        if b.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "group Hessian dim {} != n = {n}",
                b.n()
            )));
        }
    }
    spec.validate()?;
    let rows_per = m / g;
    let scales = scale_map(w_star, spec)?;
    let mut values = Matrix::zeros(m, n);
    let mut codes = vec![0i64; m * n];
    let mut sweeps = 0usize;
    let mut converged = true;
    let mut proxy = 0.0;
    for (gi, block) in blocks.iter().enumerate() {
        let r0 = gi * rows_per;
        let r1 = r0 + rows_per;
        let w_sub = w_star.block(r0, r1, 0, n);
        let factors = ldl(block, reg)?;
        let l_i_prime = strictly_lower_part(&factors.l);
        let l_o_prime = Matrix::zeros(rows_per, rows_per);
        let sub_scales = scales.slice_rows(r0, r1);
        let (q, s, c) = fixed_point_round(
            &w_sub,
            &l_o_prime,
            &l_i_prime,
            spec,
            &sub_scales,
            seed,
            r0,
            n + 1,
        )?;
        sweeps = sweeps.max(s);
        converged &= c;
        let block_reg = block.regularized(reg);
        let delta = w_sub.sub(&q.values);
        for r in 0..rows_per {
            let row = delta.block(r, r + 1, 0, n);
            let hrow = row.matmul(block_reg.as_matrix());
            proxy += row.frob_dot(&hrow);
        }
        values.set_block(r0, 0, &q.values);
        for r in 0..rows_per {
            for j in 0..n {
                codes[(r0 + r) * n + j] = q.code(r, j);
            }
        }
    }
    let w_hat = QuantizedWeights::from_parts(m, n, codes, scales, values);
    Ok(RoundingResult { w_hat, sweeps, proxy_error: proxy, converged })
}
