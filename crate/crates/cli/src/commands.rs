//! Handlers for the round, sketch and bound-check subcommands.

use crate::config::{BoundCheckConfig, RoundConfig, SketchConfig};
use serde::Serialize;
use std::fs;
use std::path::Path;
use yaqa_core::container;
use yaqa_core::linalg::SymMatrix;
use yaqa_core::model::{generate_dataset, true_layer_hessian, LabelMode, ToyModel};
use yaqa_core::quantize::{quantize_nearest, quantize_stochastic, RoundingMode};
use yaqa_core::rounding::{
    guidedquant_round, ldlq, proxy_error, yaqa_round, yaqa_round_wavefront, RoundingProblem,
    RoundingResult,
};
use yaqa_core::sketch::{
    ldlq_sketch, power_iterate_full, sketch_a, sketch_b, sketch_quality, van_loan_optimal,
    KronSketch,
};
use yaqa_core::transform::{incoherence_process, IncoherenceSeeds};
use yaqa_core::verify;

fn read_sym(path: &Path) -> Result<SymMatrix, String> {
    let m = container::read_matrix(path).map_err(|e| e.to_string())?;
    SymMatrix::new(m).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct RoundOutput {
    algorithm: String,
    sweeps: usize,
    converged: bool,
    proxy_error: f64,
    seed: u64,
    ip: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform_seeds: Option<IncoherenceSeeds>,
}

pub fn cmd_round(cfg: &RoundConfig, out: &Path, seed_override: Option<u64>) -> Result<(), String> {
    cfg.validate()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let w = container::read_matrix(&cfg.weights).map_err(|e| e.to_string())?;
    let (m, n) = (w.rows(), w.cols());

    let mut transform_seeds = None;
    let result: RoundingResult = if cfg.algorithm == "nearest" {
        let q = match cfg.quantizer.mode {
            RoundingMode::Nearest => quantize_nearest(&w, &cfg.quantizer).map_err(|e| e.to_string())?,
            RoundingMode::Stochastic => {
                quantize_stochastic(&w, &cfg.quantizer, seed).map_err(|e| e.to_string())?
            }
        };
        let p = proxy_error(&w, &q.values, &SymMatrix::eye(m), &SymMatrix::eye(n))
            .map_err(|e| e.to_string())?;
        RoundingResult { w_hat: q, sweeps: 1, proxy_error: p, converged: true }
    } else if let Some(g) = cfg.algorithm.strip_prefix("guidedquant:") {
        let _g: usize = g.parse().expect("validated");
        let blocks: Vec<SymMatrix> = cfg
            .group_hessians
            .iter()
            .map(|p| read_sym(p))
            .collect::<Result<_, _>>()?;
        guidedquant_round(&w, &blocks, &cfg.quantizer, cfg.reg, seed).map_err(|e| e.to_string())?
    } else {
        let h_i = read_sym(cfg.h_i.as_ref().expect("validated"))?;
        let h_o = match &cfg.h_o {
            Some(p) => read_sym(p)?,
            None => SymMatrix::eye(m),
        };
        let sketch = KronSketch::new(h_o, h_i, yaqa_core::sketch::SketchMeta {
            method: "file".into(),
            iterations: 0,
            seed,
            h_o_scale: 1.0,
            normalized: false,
            note: format!("loaded from {}", cfg.weights.display()),
        });
        let (w_run, sk_run) = if cfg.ip {
            let seeds = IncoherenceSeeds {
                row_seed: seed.wrapping_add(0x0001_0000),
                col_seed: seed.wrapping_add(0x0002_0000),
            };
            transform_seeds = Some(seeds);
            let (w_t, sk_t, _) = incoherence_process(&w, &sketch, seeds).map_err(|e| e.to_string())?;
            (w_t, sk_t)
        } else {
            (w.clone(), sketch)
        };
        let problem = RoundingProblem::new(w_run, sk_run, cfg.quantizer, cfg.reg, seed);
        match cfg.algorithm.as_str() {
            "ldlq" => ldlq(&problem).map_err(|e| e.to_string())?,
            "yaqa" => yaqa_round(&problem).map_err(|e| e.to_string())?,
            "yaqa-wavefront" => yaqa_round_wavefront(&problem).map_err(|e| e.to_string())?,
            other => unreachable!("validated algorithm {other}"),
        }
    };

    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    container::write_matrix(&out.join("codes.krnd"), &result.w_hat.codes_matrix())
        .map_err(|e| e.to_string())?;
    container::write_matrix(&out.join("dequant.krnd"), &result.w_hat.values)
        .map_err(|e| e.to_string())?;
    let payload = RoundOutput {
        algorithm: cfg.algorithm.clone(),
        sweeps: result.sweeps,
        converged: result.converged,
        proxy_error: result.proxy_error,
        seed,
        ip: cfg.ip,
        transform_seeds,
    };
    fs::write(
        out.join("result.json"),
        serde_json::to_string_pretty(&payload).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    println!("round: {} sweeps={} proxy={:.6e}", cfg.algorithm, result.sweeps, result.proxy_error);
    Ok(())
}

#[derive(Serialize)]
struct SketchSidecar {
    method: String,
    iterations: usize,
    seed: u64,
    h_o_scale: f64,
    normalized: bool,
    note: String,
    m: usize,
    n: usize,
    ip: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform_seeds: Option<IncoherenceSeeds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<yaqa_core::sketch::QualityReport>,
}

pub struct SketchOverrides {
    pub method: Option<String>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<std::path::PathBuf>,
}

pub fn cmd_sketch(cfg: &SketchConfig, out: &Path, ov: SketchOverrides) -> Result<(), String> {
    let mut cfg = cfg.clone();
    if let Some(m) = ov.method {
        cfg.method = m;
    }
    if let Some(i) = ov.iters {
        cfg.iters = i;
    }
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(p) = ov.data {
        cfg.data = crate::config::load_config(&p)?;
    }
    cfg.validate()?;

    let model = ToyModel::random(&cfg.model.dims, cfg.model.seed).map_err(|e| e.to_string())?;
    let data = generate_dataset(model.input_dim(), &cfg.data).map_err(|e| e.to_string())?;
    let needs_dense = matches!(cfg.method.as_str(), "powerfull" | "vanloan");
    let w_layer = model.layer(cfg.layer);
    let dense_ok = w_layer.rows() * w_layer.cols() <= yaqa_core::sketch::DENSE_CAP;
    let dense = if needs_dense || dense_ok {
        let h = true_layer_hessian(&model, cfg.layer, &data, LabelMode::Exact, cfg.seed);
        match h {
            Ok(h) => Some(h),
            Err(e) if needs_dense => return Err(e.to_string()),
            Err(_) => None,
        }
    } else {
        None
    };
    let sketch = match cfg.method.as_str() {
        "ldlq" => ldlq_sketch(&model, cfg.layer, &data),
        "a" => sketch_a(&model, cfg.layer, &data, cfg.iters, cfg.seed, cfg.labels),
        "b" => sketch_b(&model, cfg.layer, &data, cfg.seed, cfg.labels),
        "powerfull" => power_iterate_full(dense.as_ref().unwrap(), cfg.iters),
        "vanloan" => van_loan_optimal(dense.as_ref().unwrap()),
        other => unreachable!("validated method {other}"),
    }
    .and_then(|s| s.finalize())
    .map_err(|e| e.to_string())?;

    let (sketch, transform_seeds) = if cfg.ip {
        let seeds = IncoherenceSeeds {
            row_seed: cfg.seed.wrapping_add(0x0001_0000),
            col_seed: cfg.seed.wrapping_add(0x0002_0000),
        };
        let w = model.layer(cfg.layer).clone();
        let (_, sk_t, _) = incoherence_process(&w, &sketch, seeds).map_err(|e| e.to_string())?;
        (sk_t, Some(seeds))
    } else {
        (sketch, None)
    };

    // Quality diagnostics whenever the dense Hessian is cheap to form.
    let quality = match &dense {
        Some(h) if !cfg.ip => sketch_quality(h, &sketch).ok(),
        _ => None,
    };

    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    container::write_matrix(&out.join("h_o.krnd"), sketch.h_o.as_matrix())
        .map_err(|e| e.to_string())?;
    container::write_matrix(&out.join("h_i.krnd"), sketch.h_i.as_matrix())
        .map_err(|e| e.to_string())?;
    let sidecar = SketchSidecar {
        method: sketch.meta.method.clone(),
        iterations: sketch.meta.iterations,
        seed: sketch.meta.seed,
        h_o_scale: sketch.meta.h_o_scale,
        normalized: sketch.meta.normalized,
        note: sketch.meta.note.clone(),
        m: sketch.m(),
        n: sketch.n(),
        ip: cfg.ip,
        transform_seeds,
        quality,
    };
    fs::write(
        out.join("meta.json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    println!("sketch: method={} -> {}", cfg.method, out.display());
    Ok(())
}

pub fn cmd_bound_check(cfg: &BoundCheckConfig, out: &Path, seed_override: Option<u64>) -> Result<(), String> {
    cfg.validate()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let mut csv = String::from(
        "# yaqa-bounds v1\ninstance,seed,proxy_error,proxy_bound_trd,proxy_bound_mu,true_error,theorem1_bound,cosine,ratio_eq8,rank_condition_k,sigma_sq,mu_o,mu_i\n",
    );
    for i in 0..cfg.instances {
        let s = seed.wrapping_add(i as u64 * 7919);
        let blocked = cfg.include_blocked && i % 2 == 1;
        let r = verify::bound_check_instance(s, blocked).map_err(|e| e.to_string())?;
        csv.push_str(&format!(
            "{i},{s},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.proxy_error,
            r.proxy_bound_trd,
            r.proxy_bound_mu,
            r.true_error,
            r.theorem1_bound,
            r.cosine,
            r.ratio_eq8,
            r.rank_condition_k,
            r.sigma_sq,
            r.mu_o,
            r.mu_i,
        ));
    }
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    fs::write(out.join("bounds.csv"), csv).map_err(|e| e.to_string())?;
    println!("bound-check: {} instances -> {}", cfg.instances, out.join("bounds.csv").display());
    Ok(())
}
