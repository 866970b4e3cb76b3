//! Numeric evaluation of the error bounds: the proxy-error bound in trace
//! and incoherence form, the cosine-similarity gap inequality, the end-to-end
//! bound combining the two, and the bound ratio against the input-side-only
//! baseline.
//!
//! All unsubscripted norms are Frobenius. Callers pass the regularized
//! factors that the rounding actually used.

use crate::error::Result;
use crate::linalg::{block_ldl, trace_sqrt, SymMatrix};
use crate::matrix::Matrix;
use crate::quantize::QuantizerSpec;
use crate::rounding::proxy_error;
use crate::sketch::{kron_inner, FisherEstimate, KronSketch};
use serde::Serialize;

/// Everything a bound evaluation produced, with NaN for fields the given
/// inputs cannot determine.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub proxy_error: f64,
    pub proxy_bound_trd: f64,
    pub proxy_bound_mu: f64,
    pub true_error: f64,
    pub theorem1_bound: f64,
    pub cosine: f64,
    pub ratio_eq8: f64,
    pub rank_condition_k: f64,
    pub sigma_sq: f64,
    pub mu_o: f64,
    pub mu_i: f64,
    /// Input conventions the numbers were computed under.
    pub provenance: String,
}

/// Proxy-error bounds: (tr(D_I)·tr(D_O)·g_x·g_y·σ², incoherence form).
/// D traces come from the g-block LDL factors matching the quantizer tile;
/// the scalar case is block size 1.
pub fn proxy_bounds(
    h_o: &SymMatrix,
    h_i: &SymMatrix,
    spec: &QuantizerSpec,
    sigma_sq: f64,
    mu_o: f64,
    mu_i: f64,
) -> Result<(f64, f64)> {
    let (g_x, g_y) = spec.block;
    let (m, n) = (h_o.n(), h_i.n());
    let tr_d_o = block_ldl(h_o, g_x, 0.0)?.trace_d();
    let tr_d_i = block_ldl(h_i, g_y, 0.0)?.trace_d();
    let g = (g_x * g_y) as f64;
    let trd_bound = tr_d_i * tr_d_o * g * sigma_sq;
    let ts_o = trace_sqrt(h_o)?;
    let ts_i = trace_sqrt(h_i)?;
    let mu_bound =
        g * mu_i * mu_i * mu_o * mu_o / ((m * n) as f64) * ts_i * ts_i * ts_o * ts_o * sigma_sq;
    Ok((trd_bound, mu_bound))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CosineGap {
    /// ‖Δ‖_F² √(2 − 2c).
    pub bound: f64,
    /// |vecΔ (H/‖H‖) vecΔᵀ − vecΔ ((H_O⊗H_I)/(‖H_O‖‖H_I‖)) vecΔᵀ|.
    pub measured: f64,
    pub cosine: f64,
}

/// The normalized quadratic-form gap and its cosine bound, evaluated on one
/// instance.
pub fn cosine_gap_bound(
    h: &FisherEstimate,
    sketch: &KronSketch,
    delta: &Matrix,
) -> Result<CosineGap> {
    let nh = h.h().frob_norm();
    let no = sketch.h_o.frob_norm();
    let ni = sketch.h_i.frob_norm();
    if nh == 0.0 || no == 0.0 || ni == 0.0 {
        return Err(crate::error::Error::ZeroMatrix("cosine_gap_bound on zero matrix".into()));
    }
    let cosine = kron_inner(h, &sketch.h_o, &sketch.h_i) / (nh * no * ni);
    let d2 = {
        let f = delta.frob_norm();
        f * f
    };
    let bound = d2 * (2.0 - 2.0 * cosine).max(0.0).sqrt();
    let lhs = h.quad_form(delta)? / nh;
    let rhs = proxy_error(
        &Matrix::zeros(delta.rows(), delta.cols()),
        &delta.scale(-1.0),
        &sketch.h_o,
        &sketch.h_i,
    )? / (no * ni);
    Ok(CosineGap { bound, measured: (lhs - rhs).abs(), cosine })
}

/// The full end-to-end bound for one realized Δ:
/// ‖H‖(‖Δ‖²√(2−2c) + μ_I²μ_O²/(mn‖H_I‖‖H_O‖)·tr(H_I^½)²tr(H_O^½)²σ²),
/// reported next to the measured vec(Δ)·H·vec(Δ)ᵀ. The σ² part bounds an
/// expectation, so single realizations compare statistically.
pub fn theorem1_bound(
    h: &FisherEstimate,
    sketch: &KronSketch,
    spec: &QuantizerSpec,
    sigma_sq: f64,
    delta: &Matrix,
) -> Result<BoundReport> {
    let (m, n) = (sketch.m(), sketch.n());
    let mu_o = crate::transform::incoherence_mu(&sketch.h_o)?;
    let mu_i = crate::transform::incoherence_mu(&sketch.h_i)?;
    let nh = h.h().frob_norm();
    let no = sketch.h_o.frob_norm();
    let ni = sketch.h_i.frob_norm();
    let cosine = kron_inner(h, &sketch.h_o, &sketch.h_i) / (nh * no * ni);
    let ts_o = trace_sqrt(&sketch.h_o)?;
    let ts_i = trace_sqrt(&sketch.h_i)?;
    let d2 = {
        let f = delta.frob_norm();
        f * f
    };
    let mu_term =
        mu_i * mu_i * mu_o * mu_o / ((m * n) as f64 * ni * no) * ts_i * ts_i * ts_o * ts_o * sigma_sq;
    let rhs = nh * (d2 * (2.0 - 2.0 * cosine).max(0.0).sqrt() + mu_term);
    let true_error = h.quad_form(delta)?;
    let w_zero = Matrix::zeros(delta.rows(), delta.cols());
    let proxy = proxy_error(&w_zero, &delta.scale(-1.0), &sketch.h_o, &sketch.h_i)?;
    let (trd, mu_bound) = proxy_bounds(&sketch.h_o, &sketch.h_i, spec, sigma_sq, mu_o, mu_i)?;
    Ok(BoundReport {
        proxy_error: proxy,
        proxy_bound_trd: trd,
        proxy_bound_mu: mu_bound,
        true_error,
        theorem1_bound: rhs,
        cosine,
        ratio_eq8: f64::NAN,
        rank_condition_k: f64::NAN,
        sigma_sq,
        mu_o,
        mu_i,
        provenance: "frobenius norms; factors as passed (regularize upstream)".to_string(),
    })
}

/// Incoherences entering the bound ratio.
#[derive(Debug, Clone, Copy)]
pub struct Eq8Mus {
    pub mu_o: f64,
    pub mu_i: f64,
    pub mu_1: f64,
}

/// Ratio of the trace parts of the two-sided bound and the input-side-only
/// baseline, plus the rank threshold on H_O below which the ratio is ≤ 1:
/// ratio = μ_O²μ_I² tr(H_I^½)² ‖H_1‖ tr(H_O^½)² / (m√m μ_1² tr(H_1^½)² ‖H_I‖ ‖H_O‖),
/// k_O* = m μ_1² tr(H_1^½)² ‖H_I‖ / (μ_O²μ_I² tr(H_I^½)² ‖H_1‖).
pub fn eq8_ratio(sketch: &KronSketch, h_1: &SymMatrix, mus: Eq8Mus) -> Result<(f64, f64)> {
    let m = sketch.m() as f64;
    let ts_o = trace_sqrt(&sketch.h_o)?;
    let ts_i = trace_sqrt(&sketch.h_i)?;
    let ts_1 = trace_sqrt(h_1)?;
    let n_1 = h_1.frob_norm();
    let n_i = sketch.h_i.frob_norm();
    let n_o = sketch.h_o.frob_norm();
    let mu2 = mus.mu_o * mus.mu_o * mus.mu_i * mus.mu_i;
    let ratio = mu2 * ts_i * ts_i * n_1 * ts_o * ts_o
        / (m * m.sqrt() * mus.mu_1 * mus.mu_1 * ts_1 * ts_1 * n_i * n_o);
    let k_o = m * mus.mu_1 * mus.mu_1 * ts_1 * ts_1 * n_i / (mu2 * ts_i * ts_i * n_1);
    Ok((ratio, k_o))
}
