//! Property suites tying the modules together. Each criterion is a seeded,
//! deterministic batch check that reports pass/fail with a reproduction seed;
//! the acceptance tests and the CLI `verify` subcommand both run these.

use crate::bounds::{self, Eq8Mus};
use crate::error::Result;
use crate::gen;
use crate::linalg::{block_ldl, kron, ldl, sym_eigen, SymMatrix};
use crate::matrix::Matrix;
use crate::model::{
    generate_dataset, kl_to_reference, true_layer_hessian, DataSpec, LabelMode, ToyModel,
};
use crate::quantize::{scale_map, sigma_sq_bound, QuantizerSpec, RoundingMode, ScalePolicy};
use crate::rounding::{ldlq, vec_ldlq_oracle, yaqa_round, yaqa_round_wavefront, RoundingProblem};
use crate::sketch::{
    kron_inner, ldlq_sketch, power_iterate_full, sketch_a, sketch_b, sketch_quality,
    van_loan_optimal, FisherEstimate, KronSketch, Provenance,
};
use crate::snd::{boolean_power_snd, kron_support, snd, SupportPattern};
use crate::transform::{incoherence_mu, incoherence_process, trace_ratio_diagnostic, IncoherenceSeeds};
use rand::Rng;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seed: Option<u64>,
    pub elapsed_s: f64,
}

impl Check {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let seed = match self.seed {
            Some(s) if !self.passed => format!(" (repro seed={s})"),
            _ => String::new(),
        };
        format!("{status} {}{} [{:.2}s] {}", self.name, seed, self.elapsed_s, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Snd,
    Oracle,
    Bounds,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "snd" => Ok(Suite::Snd),
            "oracle" => Ok(Suite::Oracle),
            "bounds" => Ok(Suite::Bounds),
            "all" => Ok(Suite::All),
            other => Err(format!("unknown suite '{other}' (snd|oracle|bounds|all)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOpts {
    pub seed: u64,
    /// Corrupt the vec convention inside the oracle check; the suite must
    /// then fail (a fixture for exercising the failure path).
    pub negative_control: bool,
}

impl Default for VerifyOpts {
    fn default() -> Self {
        VerifyOpts { seed: 0, negative_control: false }
    }
}

pub fn run_suite(suite: Suite, opts: VerifyOpts) -> SuiteReport {
    let s = opts.seed;
    let checks = match suite {
        Suite::Snd => vec![criterion2_snd(s)],
        Suite::Oracle => vec![criterion1_oracle_equivalence(s, opts.negative_control)],
        Suite::Bounds => vec![criterion3_proxy_bound(s), criterion4_cosine_theorem1(s)],
        Suite::All => vec![
            criterion1_oracle_equivalence(s, opts.negative_control),
            criterion2_snd(s),
            criterion3_proxy_bound(s),
            criterion4_cosine_theorem1(s),
            criterion5_sketch_optimality(s),
            criterion6_sketch_ordering(s),
            criterion7_kl_direction(s),
            criterion8_incoherence(s),
            criterion9_model_calculus(s),
        ],
    };
    SuiteReport { checks }
}

fn run_check(name: &str, body: impl FnOnce() -> Result<(bool, String, Option<u64>)>) -> Check {
    let start = Instant::now();
    let (passed, detail, seed) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}"), None),
    };
    Check { name: name.to_string(), passed, detail, seed, elapsed_s: start.elapsed().as_secs_f64() }
}

fn unit_grid(mode: RoundingMode) -> QuantizerSpec {
    QuantizerSpec::new(23, mode, ScalePolicy::Fixed(1.0))
}

/// Criterion 1: yaqa_round, yaqa_round_wavefront, and the vec oracle on
/// H_O ⊗ H_I produce entry-identical codes; ldlq matches the oracle on
/// I ⊗ H_I. 100 random instances, m,n in {2,3,4}, unit grid, nearest.
pub fn criterion1_oracle_equivalence(seed: u64, corrupt_vec: bool) -> Check {
    run_check("criterion 1: oracle equivalence", || {
        let spec = unit_grid(RoundingMode::Nearest);
        let dims = [2usize, 3, 4];
        let mut checked = 0usize;
        for inst in 0..100u64 {
            let s = seed.wrapping_add(inst.wrapping_mul(101));
            let m = dims[(inst % 3) as usize];
            let n = dims[((inst / 3) % 3) as usize];
            let w = gen::random_matrix(m, n, s).scale(2.0);
            let h_o = gen::random_spd(m, 0.3, s.wrapping_add(1));
            let h_i = gen::random_spd(n, 0.3, s.wrapping_add(2));
            let sketch = KronSketch::from_factors(h_o.clone(), h_i.clone());
            let problem = RoundingProblem::new(w.clone(), sketch, spec, 0.0, s);
            let ya = yaqa_round(&problem)?;
            let wf = yaqa_round_wavefront(&problem)?;
            let h_tilde = if corrupt_vec {
                SymMatrix::symmetrize(&kron(h_i.as_matrix(), h_o.as_matrix()))
            } else {
                SymMatrix::symmetrize(&kron(h_o.as_matrix(), h_i.as_matrix()))
            };
            let oracle = vec_ldlq_oracle(&w, &h_tilde, &spec, 0.0, s)?;
            if ya.w_hat.codes() != oracle.w_hat.codes() {
                return Ok((false, format!("yaqa vs oracle codes differ at instance {inst}"), Some(s)));
            }
            if wf.w_hat.codes() != oracle.w_hat.codes() {
                return Ok((false, format!("wavefront vs oracle codes differ at instance {inst}"), Some(s)));
            }
            // LDLQ against the input-side-only assembly.
            let lsketch = KronSketch::ldlq(m, h_i.clone());
            let lr = ldlq(&RoundingProblem::new(w.clone(), lsketch, spec, 0.0, s))?;
            let h_ldlq = SymMatrix::symmetrize(&kron(&Matrix::eye(m), h_i.as_matrix()));
            let lo = vec_ldlq_oracle(&w, &h_ldlq, &spec, 0.0, s)?;
            if lr.w_hat.codes() != lo.w_hat.codes() {
                return Ok((false, format!("ldlq vs oracle codes differ at instance {inst}"), Some(s)));
            }
            checked += 1;
        }
        Ok((true, format!("{checked} instances entry-identical"), None))
    })
}

/// Criterion 2: snd by DAG depth equals boolean matrix powers on 500 random
/// masks (n ≤ 64); structural sweep budgets hold across a batch of rounding
/// runs; the Kronecker snd bound snd(L1⊗L2) ≤ snd(L1)+snd(L2)−1 holds on 200
/// random pairs.
pub fn criterion2_snd(seed: u64) -> Check {
    run_check("criterion 2: snd properties", || {
        let mut rng = gen::rng(seed.wrapping_add(7));
        for i in 0..500u64 {
            let n = rng.gen_range(2..=64);
            let density = rng.gen_range(0.05..0.8);
            let mask = gen::random_mask(n, density, seed.wrapping_add(i));
            if snd(&mask) != boolean_power_snd(&mask) {
                return Ok((false, format!("dag vs power mismatch n={n}"), Some(seed.wrapping_add(i))));
            }
        }
        for i in 0..200u64 {
            let na = rng.gen_range(1..=8);
            let nb = rng.gen_range(1..=8);
            let a = gen::random_mask(na, 0.5, seed.wrapping_add(1000 + i));
            let b = gen::random_mask(nb, 0.5, seed.wrapping_add(2000 + i));
            let k = kron_support(&a, &b);
            if snd(&k) > snd(&a) + snd(&b) - 1 {
                return Ok((
                    false,
                    format!("kron snd {} above bound {}", snd(&k), snd(&a) + snd(&b) - 1),
                    Some(seed.wrapping_add(1000 + i)),
                ));
            }
        }
        // Sweep counts never exceed the structural nilpotence budget.
        let spec = unit_grid(RoundingMode::Nearest);
        for i in 0..100u64 {
            let s = seed.wrapping_add(3000 + i);
            let m = 2 + (i % 4) as usize;
            let n = 2 + ((i / 4) % 4) as usize;
            let w = gen::random_matrix(m, n, s).scale(3.0);
            let h_o = gen::random_spd(m, 0.2, s.wrapping_add(1));
            let h_i = gen::random_spd(n, 0.2, s.wrapping_add(2));
            let f_o = ldl(&h_o, 0.0)?;
            let f_i = ldl(&h_i, 0.0)?;
            let budget = snd(&kron_support(
                &SupportPattern::from_unit_lower(&f_o.l),
                &SupportPattern::from_unit_lower(&f_i.l),
            ));
            let sketch = KronSketch::from_factors(h_o, h_i);
            let res = yaqa_round(&RoundingProblem::new(w, sketch, spec, 0.0, s))?;
            if res.sweeps > budget {
                return Ok((
                    false,
                    format!("{} sweeps exceeded snd budget {budget}", res.sweeps),
                    Some(s),
                ));
            }
        }
        Ok((true, "500 masks, 200 kron pairs, 100 rounding budgets".into(), None))
    })
}

/// Criterion 3: mean proxy error over 200 stochastic trials stays within
/// 1.05 of tr(D_I)·tr(D_O)·g_x·g_y·σ² on 50 instances, half with 2×2 tiles.
pub fn criterion3_proxy_bound(seed: u64) -> Check {
    run_check("criterion 3: proxy-error bound", || {
        let mut rng = gen::rng(seed.wrapping_add(13));
        for inst in 0..50u64 {
            let s = seed.wrapping_add(inst.wrapping_mul(977));
            let blocked = inst >= 25;
            let (m, n) = if blocked {
                (2 * rng.gen_range(1..=4), 2 * rng.gen_range(1..=4))
            } else {
                (rng.gen_range(2..=8), rng.gen_range(2..=8))
            };
            let spec = QuantizerSpec::new(16, RoundingMode::Stochastic, ScalePolicy::Fixed(0.25))
                .with_block(if blocked { 2 } else { 1 }, if blocked { 2 } else { 1 });
            let w = gen::random_matrix(m, n, s);
            let h_o = gen::random_spd(m, 0.2, s.wrapping_add(1));
            let h_i = gen::random_spd(n, 0.2, s.wrapping_add(2));
            let (g_x, g_y) = spec.block;
            let tr_d_o = block_ldl(&h_o, g_x, 0.0)?.trace_d();
            let tr_d_i = block_ldl(&h_i, g_y, 0.0)?.trace_d();
            let scales = scale_map(&w, &spec)?;
            let sigma_sq = sigma_sq_bound(&spec, &scales);
            let bound = tr_d_i * tr_d_o * (g_x * g_y) as f64 * sigma_sq;
            let mut mean = 0.0;
            let trials = 200u64;
            for t in 0..trials {
                let problem = RoundingProblem::new(
                    w.clone(),
                    KronSketch::from_factors(h_o.clone(), h_i.clone()),
                    spec,
                    0.0,
                    s.wrapping_add(t.wrapping_mul(65537)),
                );
                mean += yaqa_round(&problem)?.proxy_error;
            }
            mean /= trials as f64;
            if mean > bound * 1.05 {
                return Ok((
                    false,
                    format!("instance {inst}: mean proxy {mean:.4e} > 1.05 × bound {bound:.4e}"),
                    Some(s),
                ));
            }
        }
        Ok((true, "50 instances within 1.05×trace bound (incl. 2×2 tiles)".into(), None))
    })
}

/// Criterion 4: the cosine gap inequality holds on 100 random instances, and the
/// end-to-end bound dominates the measured true error (mean over 50
/// stochastic trials) on 20 toy-model layers.
pub fn criterion4_cosine_theorem1(seed: u64) -> Check {
    run_check("criterion 4: cosine gap + end-to-end bound", || {
        for inst in 0..100u64 {
            let s = seed.wrapping_add(inst.wrapping_mul(31));
            let (m, n) = (2 + (inst % 3) as usize, 2 + ((inst / 3) % 3) as usize);
            let h = FisherEstimate::new(
                gen::random_spd(m * n, 0.1, s),
                m,
                n,
                Provenance::ExactEnumeration,
            );
            let sk = KronSketch::from_factors(
                gen::random_spd(m, 0.2, s.wrapping_add(1)),
                gen::random_spd(n, 0.2, s.wrapping_add(2)),
            );
            let delta = gen::random_matrix(m, n, s.wrapping_add(3));
            let gap = bounds::cosine_gap_bound(&h, &sk, &delta)?;
            if gap.measured > gap.bound + 1e-12 {
                return Ok((
                    false,
                    format!("gap {:.3e} above bound {:.3e}", gap.measured, gap.bound),
                    Some(s),
                ));
            }
        }
        // End-to-end bound on toy layers.
        let reg = 1e-4;
        for inst in 0..20u64 {
            let s = seed.wrapping_add(40_000 + inst.wrapping_mul(613));
            let model = ToyModel::random(&[6, 8, 4], s)?;
            let data = generate_dataset(
                6,
                &DataSpec { sequences: 24, tokens_per_sequence: 4, correlation: 0.5, seed: s },
            )?;
            let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, s)?;
            let sk = van_loan_optimal(&h)?.finalize()?;
            let h_o_reg = sk.h_o.regularized(reg);
            let h_i_reg = sk.h_i.regularized(reg);
            let sk_reg = KronSketch::from_factors(h_o_reg, h_i_reg);
            let spec = QuantizerSpec::new(16, RoundingMode::Stochastic, ScalePolicy::Fixed(0.05));
            let w = model.layer(0).clone();
            let scales = scale_map(&w, &spec)?;
            let sigma_sq = sigma_sq_bound(&spec, &scales);
            let mut mean_lhs = 0.0;
            let mut mean_rhs = 0.0;
            for t in 0..50u64 {
                let problem = RoundingProblem::new(
                    w.clone(),
                    sk_reg.clone(),
                    spec,
                    0.0,
                    s.wrapping_add(t.wrapping_mul(257)),
                );
                let res = yaqa_round(&problem)?;
                let delta = w.sub(&res.w_hat.values);
                let report = bounds::theorem1_bound(&h, &sk_reg, &spec, sigma_sq, &delta)?;
                mean_lhs += report.true_error;
                mean_rhs += report.theorem1_bound;
            }
            mean_lhs /= 50.0;
            mean_rhs /= 50.0;
            if mean_lhs > mean_rhs {
                return Ok((
                    false,
                    format!("layer {inst}: mean LHS {mean_lhs:.4e} > mean RHS {mean_rhs:.4e}"),
                    Some(s),
                ));
            }
        }
        Ok((true, "100 gap instances, 20 toy layers bounded".into(), None))
    })
}

/// Criterion 5: power iteration reaches the Van Loan objective within 1e-6
/// relative on 50 random p.s.d. instances (mn up to 1024), the normalized
/// cosine never decreases across iterations, and exact Kronecker inputs are
/// recovered to cosine 1 − 1e-9 after one iteration.
pub fn criterion5_sketch_optimality(seed: u64) -> Check {
    run_check("criterion 5: sketch optimality", || {
        let mut rng = gen::rng(seed.wrapping_add(5));
        let mut shapes: Vec<(usize, usize)> = Vec::new();
        for _ in 0..44 {
            shapes.push((rng.gen_range(2..=5), rng.gen_range(2..=5)));
        }
        shapes.extend_from_slice(&[(8, 8), (8, 16), (16, 8), (16, 16), (32, 16), (64, 16)]);
        for (inst, &(m, n)) in shapes.iter().enumerate() {
            let s = seed.wrapping_add(inst as u64 * 389);
            let h = FisherEstimate::new(
                gen::random_psd_with_gap(m, n, 0.5, s),
                m,
                n,
                Provenance::ExactEnumeration,
            );
            let nh = h.h().frob_norm();
            let vl = van_loan_optimal(&h)?;
            let vl_obj = residual(&h, &vl);
            let mut prev_cos = f64::NEG_INFINITY;
            let mut pi_obj = f64::INFINITY;
            for it in 1..=50usize {
                let sk = power_iterate_full(&h, it)?;
                let c = kron_inner(&h, &sk.h_o, &sk.h_i) / (sk.h_o.frob_norm() * sk.h_i.frob_norm());
                if c < prev_cos - 1e-10 * nh {
                    return Ok((
                        false,
                        format!("({m}x{n}) normalized cosine decreased at iter {it}"),
                        Some(s),
                    ));
                }
                prev_cos = c;
                pi_obj = residual(&h, &sk);
                if pi_obj <= vl_obj * (1.0 + 1e-6) + 1e-9 * nh {
                    break;
                }
            }
            if pi_obj > vl_obj * (1.0 + 1e-6) + 1e-9 * nh {
                return Ok((
                    false,
                    format!("({m}x{n}) power obj {pi_obj:.6e} vs van loan {vl_obj:.6e}"),
                    Some(s),
                ));
            }
        }
        // Exact Kronecker recovery in one iteration.
        for inst in 0..10u64 {
            let s = seed.wrapping_add(90_000 + inst * 17);
            let (_, _, hk) = gen::random_kron_psd(3 + (inst % 3) as usize, 2 + (inst % 4) as usize, s);
            let m = 3 + (inst % 3) as usize;
            let n = 2 + (inst % 4) as usize;
            let h = FisherEstimate::new(hk, m, n, Provenance::ExactEnumeration);
            let sk = power_iterate_full(&h, 1)?;
            let c = kron_inner(&h, &sk.h_o, &sk.h_i)
                / (h.h().frob_norm() * sk.h_o.frob_norm() * sk.h_i.frob_norm());
            if c < 1.0 - 1e-9 {
                return Ok((false, format!("kron recovery cosine {c}"), Some(s)));
            }
        }
        Ok((true, "50 instances matched Van Loan; monotone; exact-Kron recovered".into(), None))
    })
}

fn residual(h: &FisherEstimate, sk: &KronSketch) -> f64 {
    let nh = h.h().frob_norm();
    let no = sk.h_o.frob_norm();
    let ni = sk.h_i.frob_norm();
    let inner = kron_inner(h, &sk.h_o, &sk.h_i);
    (nh * nh - 2.0 * inner + no * no * ni * ni).max(0.0).sqrt()
}

/// Criterion 6: with correlated sequence data both Fisher sketches beat the
/// input-side-only sketch in ≥ 90% of seeds; with ample independent data the
/// single-pass whole-sequence sketch matches or beats the token-independent
/// one in a majority of seeds.
pub fn criterion6_sketch_ordering(seed: u64) -> Check {
    run_check("criterion 6: sketch quality ordering", || {
        let dims = [8usize, 10, 6];
        let mut beat_ldlq = 0usize;
        for t in 0..20u64 {
            let s = seed.wrapping_add(t.wrapping_mul(7331));
            let model = ToyModel::random(&dims, s)?;
            let data = generate_dataset(
                dims[0],
                &DataSpec { sequences: 24, tokens_per_sequence: 8, correlation: 0.9, seed: s },
            )?;
            let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, s)?;
            let base = sketch_quality(&h, &ldlq_sketch(&model, 0, &data)?)?.cosine;
            let a = sketch_quality(&h, &sketch_a(&model, 0, &data, 3, s, LabelMode::MonteCarlo)?)?.cosine;
            let b = sketch_quality(&h, &sketch_b(&model, 0, &data, s, LabelMode::MonteCarlo)?)?.cosine;
            if a > base && b > base {
                beat_ldlq += 1;
            }
        }
        if beat_ldlq < 18 {
            return Ok((
                false,
                format!("A and B beat the LDLQ sketch in only {beat_ldlq}/20 correlated seeds"),
                Some(seed),
            ));
        }
        // Independent-data regime: one token per sequence, no shared latent.
        // The single-pass whole-gradient sketch has no dependence on the
        // estimated H_1, while the token-independent sketch compounds its
        // per-round Monte-Carlo noise through three passes, so with moderate
        // data the former matches or beats it on most seeds.
        let ind_dims = [14usize, 12, 8];
        let mut b_ge_a = 0usize;
        for t in 0..20u64 {
            let s = seed.wrapping_add(100_000 + t.wrapping_mul(211));
            let model = ToyModel::random(&ind_dims, s)?;
            let data = generate_dataset(
                ind_dims[0],
                &DataSpec { sequences: 176, tokens_per_sequence: 1, correlation: 0.0, seed: s },
            )?;
            let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, s)?;
            let a = sketch_quality(&h, &sketch_a(&model, 0, &data, 3, s, LabelMode::MonteCarlo)?)?.cosine;
            let b = sketch_quality(&h, &sketch_b(&model, 0, &data, s, LabelMode::MonteCarlo)?)?.cosine;
            if b >= a {
                b_ge_a += 1;
            }
        }
        if b_ge_a < 11 {
            return Ok((
                false,
                format!("B ≥ A in only {b_ge_a}/20 independent-data seeds"),
                Some(seed),
            ));
        }
        Ok((
            true,
            format!("A,B > LDLQ sketch in {beat_ldlq}/20 correlated seeds; B ≥ A in {b_ge_a}/20 independent seeds"),
            None,
        ))
    })
}

/// Criterion 7: two-sided rounding with the Van Loan sketch achieves median
/// KL ≤ LDLQ at 2, 3 and 4 bits over 20 seeds, strictly lower at 2 bits.
pub fn criterion7_kl_direction(seed: u64) -> Check {
    run_check("criterion 7: end-to-end KL direction", || {
        let dims = [8usize, 8, 5];
        let reg = 1e-4;
        let mut detail = String::new();
        for bits in [2u32, 3, 4] {
            let mut kl_ldlq = Vec::new();
            let mut kl_yaqa = Vec::new();
            for t in 0..20u64 {
                let s = seed.wrapping_add(t.wrapping_mul(917)).wrapping_add(bits as u64);
                let model = ToyModel::random(&dims, s)?;
                let data = generate_dataset(
                    dims[0],
                    &DataSpec { sequences: 48, tokens_per_sequence: 4, correlation: 0.5, seed: s },
                )?;
                let spec = QuantizerSpec::new(bits, RoundingMode::Nearest, ScalePolicy::Groupwise(dims[0]));
                let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, s)?;
                let lsk = ldlq_sketch(&model, 0, &data)?;
                let lres = ldlq(&RoundingProblem::new(model.layer(0).clone(), lsk, spec, reg, s))?;
                let ysk = van_loan_optimal(&h)?.finalize()?;
                let yres = yaqa_round(&RoundingProblem::new(model.layer(0).clone(), ysk, spec, reg, s))?;
                let m_l = model.with_layer(0, lres.w_hat.values.clone())?;
                let m_y = model.with_layer(0, yres.w_hat.values.clone())?;
                kl_ldlq.push(kl_to_reference(&model, &m_l, &data)?);
                kl_yaqa.push(kl_to_reference(&model, &m_y, &data)?);
            }
            let med_l = median(&mut kl_ldlq);
            let med_y = median(&mut kl_yaqa);
            detail.push_str(&format!("bits {bits}: yaqa {med_y:.4e} vs ldlq {med_l:.4e}; "));
            if med_y > med_l {
                return Ok((
                    false,
                    format!("median KL at {bits} bits: yaqa {med_y:.4e} > ldlq {med_l:.4e}"),
                    Some(seed),
                ));
            }
            if bits == 2 && !(med_y < med_l) {
                return Ok((
                    false,
                    format!("median KL at 2 bits not strictly lower: {med_y:.4e} vs {med_l:.4e}"),
                    Some(seed),
                ));
            }
        }
        Ok((true, detail, None))
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Criterion 8: on spiked factors the incoherence-processing trace ratio is
/// below 1 in median over 100 seeds, and RHT orthogonality and spectrum
/// preservation hold at 1e-9.
pub fn criterion8_incoherence(seed: u64) -> Check {
    run_check("criterion 8: incoherence processing", || {
        let n = 16usize;
        let mut ratios = Vec::new();
        for t in 0..100u64 {
            let s = seed.wrapping_add(t.wrapping_mul(37));
            let h_o = gen::spiked_spd(n, 30.0, s);
            let h_i = gen::spiked_spd(n, 30.0, s.wrapping_add(1));
            let w = gen::random_matrix(n, n, s.wrapping_add(2));
            let sk = KronSketch::from_factors(h_o.clone(), h_i.clone());
            let seeds = IncoherenceSeeds { row_seed: s.wrapping_add(3), col_seed: s.wrapping_add(4) };
            let (w_t, sk_t, pair) = incoherence_process(&w, &sk, seeds)?;
            // Orthogonality.
            let u = pair.u.as_matrix();
            let uut = u.matmul(&u.transpose());
            if uut.sub(&Matrix::eye(n)).frob_norm() > 1e-9 * n as f64 {
                return Ok((false, "RHT not orthogonal at 1e-9".into(), Some(s)));
            }
            // Spectrum preservation.
            let before = sym_eigen(&h_i)?.lambda;
            let after = sym_eigen(&sk_t.h_i)?.lambda;
            let scale = before[0].abs().max(1.0);
            if before
                .iter()
                .zip(&after)
                .any(|(a, b)| (a - b).abs() > 1e-9 * scale)
            {
                return Ok((false, "eigenvalues not preserved at 1e-9".into(), Some(s)));
            }
            // Norm preservation.
            if (w_t.frob_norm() - w.frob_norm()).abs() > 1e-9 * w.frob_norm() {
                return Ok((false, "weight norm not preserved".into(), Some(s)));
            }
            ratios.push(trace_ratio_diagnostic((&h_o, &h_i), (&sk_t.h_o, &sk_t.h_i), 1e-4)?);
        }
        let med = median(&mut ratios);
        if med >= 1.0 {
            return Ok((false, format!("median trace ratio {med:.4} not < 1"), Some(seed)));
        }
        Ok((true, format!("median trace ratio {med:.4} over 100 spiked seeds"), None))
    })
}

/// Criterion 9: gradients match finite differences at 1e-5 relative, the KL
/// matches its quadratic model at t = 1e-3 within 5%, and the first-order KL
/// term vanishes at 1e-8.
pub fn criterion9_model_calculus(seed: u64) -> Check {
    run_check("criterion 9: model calculus", || {
        for t in 0..20u64 {
            let s = seed.wrapping_add(t.wrapping_mul(53));
            let model = ToyModel::random(&[5, 6, 4], s)?;
            let mut rng = gen::rng(s.wrapping_add(9));
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let label = rng.gen_range(0..4);
            for layer in 0..2 {
                let grad = model.layer_grad(layer, &x, label)?;
                let w = model.layer(layer).clone();
                let h_step = 1e-5;
                let mut max_rel = 0.0f64;
                for i in 0..w.rows() {
                    for j in 0..w.cols() {
                        let mut wp = w.clone();
                        wp[(i, j)] += h_step;
                        let mut wm = w.clone();
                        wm[(i, j)] -= h_step;
                        let lp = ce_loss(&model.with_layer(layer, wp)?, &x, label)?;
                        let lm = ce_loss(&model.with_layer(layer, wm)?, &x, label)?;
                        let fd = (lp - lm) / (2.0 * h_step);
                        let denom = grad[(i, j)].abs().max(1.0);
                        max_rel = max_rel.max((fd - grad[(i, j)]).abs() / denom);
                    }
                }
                if max_rel > 1e-5 {
                    return Ok((false, format!("fd mismatch {max_rel:.2e} at layer {layer}"), Some(s)));
                }
            }
            // Taylor agreement and first-order vanishing for the KL.
            let data = generate_dataset(
                5,
                &DataSpec { sequences: 16, tokens_per_sequence: 2, correlation: 0.3, seed: s },
            )?;
            let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, s)?;
            let delta = {
                let d = gen::random_matrix(model.layer(0).rows(), model.layer(0).cols(), s.wrapping_add(4));
                d.scale(1.0 / d.frob_norm())
            };
            let quad = h.quad_form(&delta)?;
            let t_small = 1e-3;
            let kl_at = |tt: f64| -> Result<f64> {
                let w_t = model.layer(0).add(&delta.scale(tt));
                kl_to_reference(&model, &model.with_layer(0, w_t)?, &data)
            };
            let kl_p = kl_at(t_small)?;
            let ratio = kl_p / (0.5 * quad * t_small * t_small);
            if !(0.95..=1.05).contains(&ratio) {
                return Ok((false, format!("taylor ratio {ratio:.4}"), Some(s)));
            }
            let hfd = 1e-5;
            let first = (kl_at(hfd)? - kl_at(-hfd)?) / (2.0 * hfd);
            if first.abs() > 1e-8 {
                return Ok((false, format!("first-order term {first:.2e}"), Some(s)));
            }
        }
        Ok((true, "20 models: fd gradients, taylor ratio, zero first-order".into(), None))
    })
}

fn ce_loss(model: &ToyModel, x: &[f64], label: usize) -> Result<f64> {
    let tr = model.forward(x)?;
    Ok(-(tr.probs[label].max(1e-300)).ln())
}

/// One bound-check row: a random instance rounded once stochastically with
/// every bound evaluated on the realized Δ. Used by the CLI's bound-check
/// command.
pub fn bound_check_instance(seed: u64, blocked: bool) -> Result<crate::bounds::BoundReport> {
    let mut rng = gen::rng(seed);
    let (m, n) = if blocked {
        (2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3))
    } else {
        (rng.gen_range(2..=6), rng.gen_range(2..=6))
    };
    let g = if blocked { 2 } else { 1 };
    let spec = QuantizerSpec::new(16, RoundingMode::Stochastic, ScalePolicy::Fixed(0.25))
        .with_block(g, g);
    let w = gen::random_matrix(m, n, seed);
    let h = FisherEstimate::new(
        gen::random_spd(m * n, 0.1, seed.wrapping_add(5)),
        m,
        n,
        Provenance::ExactEnumeration,
    );
    let sk = KronSketch::from_factors(
        gen::random_spd(m, 0.2, seed.wrapping_add(1)),
        gen::random_spd(n, 0.2, seed.wrapping_add(2)),
    );
    let scales = scale_map(&w, &spec)?;
    let sigma_sq = sigma_sq_bound(&spec, &scales);
    let res = yaqa_round(&RoundingProblem::new(w.clone(), sk.clone(), spec, 0.0, seed))?;
    let delta = w.sub(&res.w_hat.values);
    let mut report = bounds::theorem1_bound(&h, &sk, &spec, sigma_sq, &delta)?;
    let h_1 = gen::random_spd(n, 0.2, seed.wrapping_add(7));
    let mus = Eq8Mus { mu_o: report.mu_o, mu_i: report.mu_i, mu_1: incoherence_mu(&h_1)? };
    let (ratio, k) = bounds::eq8_ratio(&sk, &h_1, mus)?;
    report.ratio_eq8 = ratio;
    report.rank_condition_k = k;
    Ok(report)
}
