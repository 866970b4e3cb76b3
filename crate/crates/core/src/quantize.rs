//! Scalar grid quantizers: signed-integer grids with fixed or groupwise
//! absmax scales, nearest (half-to-even) or stochastic rounding.
//!
//! Stochastic rounding draws its per-entry uniform from a counter-based
//! stream keyed by (seed, row, col) only, never by sweep index, so the
//! quantizer is a fixed deterministic map during fixed-point iterations and
//! results are schedule independent.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMode {
    Nearest,
    Stochastic,
}

/// Grid scale policy: one global step, or an absmax scale per contiguous
/// row segment of `group_len` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePolicy {
    Fixed(f64),
    Groupwise(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub mode: RoundingMode,
    pub scale: ScalePolicy,
    /// Quantizer tile (g_x, g_y). The scalar grid acts entrywise, so tiles
    /// only affect the rounding schedule and the blockwise error bound.
    #[serde(default = "unit_block")]
    pub block: (usize, usize),
}

fn unit_block() -> (usize, usize) {
    (1, 1)
}

impl QuantizerSpec {
    pub fn new(bits: u32, mode: RoundingMode, scale: ScalePolicy) -> Self {
        QuantizerSpec { bits, mode, scale, block: (1, 1) }
    }

    pub fn with_block(mut self, g_x: usize, g_y: usize) -> Self {
        self.block = (g_x, g_y);
        self
    }

    /// Signed grid bounds [−2^{bits−1}, 2^{bits−1}−1] in grid units.
    pub fn clamp_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.bits - 1);
        (-half, half - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits < 1 || self.bits > 32 {
            return Err(Error::Format(format!("bits must be in 1..=32, got {}", self.bits)));
        }
        match self.scale {
            ScalePolicy::Fixed(step) if !(step > 0.0) => {
                Err(Error::Format(format!("fixed step must be positive, got {step}")))
            }
            ScalePolicy::Groupwise(len) if len == 0 => {
                Err(Error::Format("group_len must be >= 1".into()))
            }
            ScalePolicy::Groupwise(_) if self.bits < 2 => {
                Err(Error::Format("groupwise absmax scaling requires bits >= 2".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-group scales, frozen from the original weights before rounding
/// starts and held fixed through fixed-point iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    group_len: usize,
    /// rows × (cols / group_len)
    scales: Matrix,
}

impl ScaleMap {
    pub fn group_len(&self) -> usize {
        self.group_len
    }

    /// Scales restricted to rows r0..r1, for per-group sub-problems.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> ScaleMap {
        ScaleMap {
            group_len: self.group_len,
            scales: self.scales.block(r0, r1, 0, self.scales.cols()),
        }
    }

    pub fn scales(&self) -> &Matrix {
        &self.scales
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.scales[(i, j / self.group_len)]
    }

    pub fn max_scale(&self) -> f64 {
        self.scales.data().iter().fold(0.0f64, |m, &s| m.max(s))
    }
}

/// Absmax scales per contiguous length-`group_len` row segment:
/// absmax / (2^{bits−1} − 1), with all-zero groups given scale 1.
pub fn groupwise_scales(w: &Matrix, group_len: usize, bits: u32) -> Result<ScaleMap> {
    if group_len == 0 || w.cols() % group_len != 0 {
        return Err(Error::BadBlockSize { g: group_len, n: w.cols() });
    }
    if bits < 2 {
        return Err(Error::Format("groupwise absmax scaling requires bits >= 2".into()));
    }
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let groups = w.cols() / group_len;
    let scales = Matrix::from_fn(w.rows(), groups, |i, g| {
        let seg = &w.row(i)[g * group_len..(g + 1) * group_len];
        let absmax = seg.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if absmax == 0.0 {
            1.0
        } else {
            absmax / qmax
        }
    });
    Ok(ScaleMap { group_len, scales })
}

/// Build the frozen scale map for a weight matrix under a spec.
pub fn scale_map(w: &Matrix, spec: &QuantizerSpec) -> Result<ScaleMap> {
    spec.validate()?;
    match spec.scale {
        ScalePolicy::Fixed(step) => Ok(ScaleMap {
            group_len: w.cols().max(1),
            scales: Matrix::from_fn(w.rows().max(1), 1, |_, _| step),
        }),
        ScalePolicy::Groupwise(len) => groupwise_scales(w, len, spec.bits),
    }
}

/// Quantized weights: integer grid codes plus the exactly-dequantized values
/// (values = codes·scale per group).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    rows: usize,
    cols: usize,
    codes: Vec<i64>,
    pub scales: ScaleMap,
    pub values: Matrix,
}

impl QuantizedWeights {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        codes: Vec<i64>,
        scales: ScaleMap,
        values: Matrix,
    ) -> Self {
        debug_assert_eq!(codes.len(), rows * cols);
        QuantizedWeights { rows, cols, codes, scales, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn code(&self, i: usize, j: usize) -> i64 {
        self.codes[i * self.cols + j]
    }

    pub fn codes(&self) -> &[i64] {
        &self.codes
    }

    /// Codes as an f64 matrix (exact for |code| < 2^53), for the container.
    pub fn codes_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.code(i, j) as f64)
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from the counter-based (seed, row, col) stream.
pub fn entry_uniform(seed: u64, row: usize, col: usize) -> f64 {
    let h = mix(
        mix(seed ^ 0x9E37_79B9_7F4A_7C15)
            ^ mix((row as u64).wrapping_mul(0xD134_2543_DE82_EF95))
            ^ mix((col as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)),
    );
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Round one entry to the grid. Nearest ties go half-to-even on the grid
/// index; out-of-range values saturate at the clamp bounds.
#[inline]
pub fn quantize_entry(
    v: f64,
    scale: f64,
    clamp: (i64, i64),
    mode: RoundingMode,
    seed: u64,
    row: usize,
    col: usize,
) -> i64 {
    let g = v / scale;
    let code = match mode {
        RoundingMode::Nearest => g.round_ties_even(),
        RoundingMode::Stochastic => {
            let f = g.floor();
            let frac = g - f;
            let u = entry_uniform(seed, row, col);
            if u < frac {
                f + 1.0
            } else {
                f
            }
        }
    };
    let code = code.max(clamp.0 as f64).min(clamp.1 as f64);
    code as i64
}

/// Quantize against a frozen scale map. `row_offset` shifts the stochastic
/// dither keys (and nothing else) so sub-problems of a larger matrix see the
/// same per-entry stream as the full problem.
pub fn quantize_with_scales(
    x: &Matrix,
    scales: &ScaleMap,
    spec: &QuantizerSpec,
    seed: u64,
    row_offset: usize,
) -> QuantizedWeights {
    let clamp = spec.clamp_range();
    let (rows, cols) = (x.rows(), x.cols());
    let mut codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            codes.push(quantize_entry(
                x[(i, j)],
                scales.at(i, j),
                clamp,
                spec.mode,
                seed,
                i + row_offset,
                j,
            ));
        }
    }
    let values = Matrix::from_fn(rows, cols, |i, j| codes[i * cols + j] as f64 * scales.at(i, j));
    QuantizedWeights { rows, cols, codes, scales: scales.clone(), values }
}

fn quantize_matrix(x: &Matrix, spec: &QuantizerSpec, seed: u64) -> Result<QuantizedWeights> {
    let scales = scale_map(x, spec)?;
    Ok(quantize_with_scales(x, &scales, spec, seed, 0))
}

/// Nearest rounding of a whole matrix.
pub fn quantize_nearest(x: &Matrix, spec: &QuantizerSpec) -> Result<QuantizedWeights> {
    assert!(spec.mode == RoundingMode::Nearest, "spec.mode must be nearest");
    quantize_matrix(x, spec, 0)
}

/// Stochastic rounding of a whole matrix with the (seed, row, col) stream.
pub fn quantize_stochastic(x: &Matrix, spec: &QuantizerSpec, seed: u64) -> Result<QuantizedWeights> {
    assert!(spec.mode == RoundingMode::Stochastic, "spec.mode must be stochastic");
    quantize_matrix(x, spec, seed)
}

/// Worst-case per-entry second moment of the rounding error for in-range
/// inputs: step²/4, maximized over groups for groupwise scales.
pub fn sigma_sq_bound(spec: &QuantizerSpec, scales: &ScaleMap) -> f64 {
    let step = match spec.scale {
        ScalePolicy::Fixed(step) => step,
        ScalePolicy::Groupwise(_) => scales.max_scale(),
    };
    step * step / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(mode: RoundingMode) -> QuantizerSpec {
        QuantizerSpec::new(23, mode, ScalePolicy::Fixed(1.0))
    }

    #[test]
    fn nearest_basic_and_ties() {
        let spec = unit_grid(RoundingMode::Nearest);
        let x = Matrix::from_rows(1, 4, &[0.4, 2.0, 0.5, 1.5]).unwrap();
        let q = quantize_nearest(&x, &spec).unwrap();
        // 0.5 -> 0 and 1.5 -> 2 under half-to-even.
        assert_eq!(q.codes(), &[0, 2, 0, 2]);
        assert_eq!(q.values.data(), &[0.0, 2.0, 0.0, 2.0]);
    }

    #[test]
    fn saturation_at_clamp() {
        let spec = QuantizerSpec::new(4, RoundingMode::Nearest, ScalePolicy::Fixed(1.0));
        let x = Matrix::from_rows(1, 2, &[100.0, -100.0]).unwrap();
        let q = quantize_nearest(&x, &spec).unwrap();
        assert_eq!(q.codes(), &[7, -8]);
    }

    #[test]
    fn stochastic_on_grid_is_exact() {
        let spec = unit_grid(RoundingMode::Stochastic);
        let x = Matrix::from_rows(1, 3, &[-2.0, 0.0, 5.0]).unwrap();
        for seed in 0..20 {
            let q = quantize_stochastic(&x, &spec, seed).unwrap();
            assert_eq!(q.codes(), &[-2, 0, 5]);
        }
    }

    #[test]
    fn stochastic_midpoint_unbiased() {
        let spec = unit_grid(RoundingMode::Stochastic);
        let x = Matrix::from_rows(1, 1, &[0.5]).unwrap();
        let t = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..t {
            let q = quantize_stochastic(&x, &spec, seed).unwrap();
            let v = q.values[(0, 0)];
            sum += v;
            sumsq += (v - 0.5) * (v - 0.5);
        }
        let mean = sum / t as f64;
        // 4·step/√T band from the unbiasedness property.
        assert!((mean - 0.5).abs() <= 4.0 / (t as f64).sqrt(), "mean = {mean}");
        // Bernoulli worst-case variance step²/4, with Monte-Carlo slack.
        assert!(sumsq / t as f64 <= 0.25 * 1.05);
    }

    #[test]
    fn groupwise_scales_basic() {
        // absmax 7 with bits=4 gives scale 1; an all-zero group gives scale 1
        // and zero codes.
        let mut data = vec![0.0; 8];
        data[0] = 7.0;
        data[1] = -3.0;
        let x = Matrix::from_rows(1, 8, &data).unwrap();
        let spec = QuantizerSpec::new(4, RoundingMode::Nearest, ScalePolicy::Groupwise(4));
        let q = quantize_nearest(&x, &spec).unwrap();
        assert_eq!(q.scales.scales().data(), &[1.0, 1.0]);
        assert_eq!(q.code(0, 0), 7);
        assert_eq!(&q.codes()[4..], &[0, 0, 0, 0]);
    }

    #[test]
    fn groupwise_dequant_error_within_half_scale() {
        let x = crate::gen::random_matrix(2, 64, 9);
        let spec = QuantizerSpec::new(4, RoundingMode::Nearest, ScalePolicy::Groupwise(32));
        let q = quantize_nearest(&x, &spec).unwrap();
        for i in 0..2 {
            for j in 0..64 {
                let s = q.scales.at(i, j);
                assert!(
                    (q.values[(i, j)] - x[(i, j)]).abs() <= s / 2.0 + 1e-15,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn spec_json_shape_is_stable() {
        // The CLI config format, pinned.
        let text = r#"{"bits":4,"mode":"nearest","scale":{"groupwise":32},"block":[1,1]}"#;
        let spec: QuantizerSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.bits, 4);
        assert_eq!(spec.mode, RoundingMode::Nearest);
        assert_eq!(spec.scale, ScalePolicy::Groupwise(32));
        assert_eq!(spec.block, (1, 1));
        assert_eq!(serde_json::to_string(&spec).unwrap(), text);
        let fixed: QuantizerSpec =
            serde_json::from_str(r#"{"bits":8,"mode":"stochastic","scale":{"fixed":0.25}}"#)
                .unwrap();
        assert_eq!(fixed.scale, ScalePolicy::Fixed(0.25));
        assert_eq!(fixed.block, (1, 1));
    }

    #[test]
    fn sigma_sq_bound_values() {
        let spec = unit_grid(RoundingMode::Nearest);
        let w = Matrix::zeros(1, 1);
        assert_eq!(sigma_sq_bound(&spec, &scale_map(&w, &spec).unwrap()), 0.25);
        let spec = QuantizerSpec::new(23, RoundingMode::Nearest, ScalePolicy::Fixed(0.5));
        assert_eq!(sigma_sq_bound(&spec, &scale_map(&w, &spec).unwrap()), 0.0625);
    }

    #[test]
    fn sigma_sq_bound_groupwise_dominates_empirical() {
        let x = crate::gen::random_matrix(4, 32, 11);
        let spec = QuantizerSpec::new(4, RoundingMode::Nearest, ScalePolicy::Groupwise(8));
        let q = quantize_nearest(&x, &spec).unwrap();
        let bound = sigma_sq_bound(&spec, &q.scales);
        let max_sq = x
            .data()
            .iter()
            .zip(q.values.data())
            .map(|(a, b)| (a - b) * (a - b))
            .fold(0.0f64, f64::max);
        assert!(max_sq <= bound + 1e-15, "max_sq={max_sq} bound={bound}");
    }

    #[test]
    fn block_independence() {
        // Quantizing a block depends only on that block's entries and its
        // group scale: perturb entries outside the group and compare codes.
        let x = crate::gen::random_matrix(4, 16, 13);
        let spec = QuantizerSpec::new(4, RoundingMode::Nearest, ScalePolicy::Groupwise(4));
        let q = quantize_nearest(&x, &spec).unwrap();
        let mut y = x.clone();
        for i in 0..4 {
            for j in 4..16 {
                y[(i, j)] += 0.37 * ((i + j) as f64);
            }
        }
        let qy = quantize_nearest(&y, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(q.code(i, j), qy.code(i, j));
            }
        }
    }

    proptest! {
        #[test]
        fn nearest_is_idempotent(seed in 0u64..500) {
            let x = crate::gen::random_matrix(3, 8, seed).scale(2.0);
            let spec = QuantizerSpec::new(6, RoundingMode::Nearest, ScalePolicy::Fixed(0.25));
            let q1 = quantize_nearest(&x, &spec).unwrap();
            let q2 = quantize_nearest(&q1.values, &spec).unwrap();
            prop_assert_eq!(q1.codes(), q2.codes());
        }

        #[test]
        fn stochastic_entry_unbiased_off_grid(frac in 0.05f64..0.95, seed in 0u64..50) {
            let t = 20_000u64;
            let mut ups = 0u64;
            for k in 0..t {
                let u = entry_uniform(seed.wrapping_mul(7919).wrapping_add(k), 0, 0);
                if u < frac { ups += 1; }
            }
            let p = ups as f64 / t as f64;
            prop_assert!((p - frac).abs() < 4.0 / (t as f64).sqrt() + 0.01);
        }
    }
}
