//! Toy-model calculus: forward/backward against independent re-evaluations,
//! the exact Fisher closed forms, and the KL's local quadratic behavior.

use yaqa_core::gen;
use yaqa_core::linalg::{kron, sym_eigen, SymMatrix};
use yaqa_core::matrix::Matrix;
use yaqa_core::model::{
    generate_dataset, kl_to_reference, second_order_error, softmax, true_layer_hessian, DataSpec,
    Dataset, LabelMode, ToyModel,
};
use yaqa_core::quantize::{quantize_nearest, QuantizerSpec, RoundingMode, ScalePolicy};
use yaqa_core::sketch::{FisherEstimate, Provenance};

#[test]
fn zero_weights_give_uniform_softmax() {
    let model = ToyModel::new(vec![Matrix::zeros(3, 4), Matrix::zeros(4, 3)]).unwrap();
    let tr = model.forward(&[0.3, -0.2, 0.9, 0.1]).unwrap();
    for &p in &tr.probs {
        assert!((p - 0.25).abs() < 1e-15);
    }
}

#[test]
fn single_identity_layer_passes_logits_through() {
    let model = ToyModel::new(vec![Matrix::eye(4)]).unwrap();
    let x = [0.5, -1.0, 2.0, 0.0];
    let tr = model.forward(&x).unwrap();
    assert_eq!(tr.logits, x.to_vec());
}

#[test]
fn forward_matches_independent_reimplementation() {
    // The same arithmetic written out longhand, independent of the
    // library path.
    let model = ToyModel::random(&[5, 7, 4], 3).unwrap();
    let x: Vec<f64> = (0..5).map(|i| (i as f64) * 0.3 - 0.7).collect();
    let tr = model.forward(&x).unwrap();

    let w1 = model.layer(0);
    let w2 = model.layer(1);
    let mut y1 = vec![0.0; 7];
    for i in 0..7 {
        for (j, &xj) in x.iter().enumerate() {
            y1[i] += w1[(i, j)] * xj;
        }
    }
    let z1: Vec<f64> = y1.iter().map(|v| v.tanh()).collect();
    let mut logits = vec![0.0; 4];
    for i in 0..4 {
        for (j, &zj) in z1.iter().enumerate() {
            logits[i] += w2[(i, j)] * zj;
        }
    }
    for (a, b) in tr.logits.iter().zip(&logits) {
        assert!((a - b).abs() <= 1e-12);
    }
    let probs = softmax(&logits);
    for (a, b) in tr.probs.iter().zip(&probs) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn gradient_vanishes_when_prediction_is_one_hot() {
    // A huge head weight saturates the softmax to an exact one-hot in f64.
    let w1 = Matrix::eye(3);
    let mut w2 = Matrix::zeros(2, 3);
    w2[(0, 0)] = 5000.0;
    let model = ToyModel::new(vec![w1, w2]).unwrap();
    let g = model.layer_grad(0, &[1.0, 0.2, -0.1], 0).unwrap();
    assert_eq!(g.frob_norm(), 0.0);
}

#[test]
fn softmax_linear_gradient_closed_form() {
    let model = ToyModel::random(&[4, 3], 9).unwrap();
    let x = [0.4, -0.8, 1.2, 0.3];
    let label = 1usize;
    let tr = model.forward(&x).unwrap();
    let g = model.layer_grad(0, &x, label).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            let expect = (tr.probs[i] - if i == label { 1.0 } else { 0.0 }) * x[j];
            assert!((g[(i, j)] - expect).abs() <= 1e-14);
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let model = ToyModel::random(&[4, 5, 3], 17).unwrap();
    let x = [0.9, -0.4, 0.2, -1.1];
    let label = 2usize;
    for layer in 0..2 {
        let g = model.layer_grad(layer, &x, label).unwrap();
        let w = model.layer(layer).clone();
        let h = 1e-5;
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let mut wp = w.clone();
                wp[(i, j)] += h;
                let mut wm = w.clone();
                wm[(i, j)] -= h;
                let loss = |m: &ToyModel| -> f64 {
                    -(m.forward(&x).unwrap().probs[label]).ln()
                };
                let fd = (loss(&model.with_layer(layer, wp).unwrap())
                    - loss(&model.with_layer(layer, wm).unwrap()))
                    / (2.0 * h);
                let denom = g[(i, j)].abs().max(1.0);
                assert!(
                    (fd - g[(i, j)]).abs() / denom <= 1e-6,
                    "layer {layer} ({i},{j}): fd {fd} vs {}",
                    g[(i, j)]
                );
            }
        }
    }
}

#[test]
fn head_layer_fisher_matches_softmax_closed_form() {
    // For the softmax head, the per-example Fisher is
    // (diag(p) − ppᵀ) ⊗ x xᵀ under the row-major pairing.
    let model = ToyModel::random(&[3, 4], 23).unwrap();
    let x = vec![0.6, -0.2, 1.0];
    let data = Dataset { sequences: vec![vec![x.clone()]] };
    let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, 0).unwrap();
    let tr = model.forward(&x).unwrap();
    let p = &tr.probs;
    let head = Matrix::from_fn(4, 4, |i, j| {
        (if i == j { p[i] } else { 0.0 }) - p[i] * p[j]
    });
    let xxt = Matrix::from_fn(3, 3, |i, j| x[i] * x[j]);
    let expect = kron(&head, &xxt);
    assert!(h.h().as_matrix().sub(&expect).frob_norm() <= 1e-12 * expect.frob_norm());
}

#[test]
fn deterministic_head_gives_zero_fisher() {
    let w1 = Matrix::eye(2);
    let mut w2 = Matrix::zeros(2, 2);
    w2[(0, 0)] = 5000.0;
    let model = ToyModel::new(vec![w1, w2]).unwrap();
    let data = Dataset { sequences: vec![vec![vec![1.0, 0.3]]] };
    let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, 0).unwrap();
    assert_eq!(h.h().frob_norm(), 0.0);
}

#[test]
fn monte_carlo_fisher_converges_to_exact() {
    let model = ToyModel::random(&[3, 4], 31).unwrap();
    let x = vec![0.8, -0.5, 0.2];
    let one = Dataset { sequences: vec![vec![x.clone()]] };
    let exact = true_layer_hessian(&model, 0, &one, LabelMode::Exact, 0).unwrap();
    // 10^5 Monte-Carlo label draws on the same input.
    let many = Dataset { sequences: vec![vec![x; 100_000]] };
    let mc = true_layer_hessian(&model, 0, &many, LabelMode::MonteCarlo, 7).unwrap();
    assert!(matches!(mc.provenance, Provenance::MonteCarlo { samples: 100_000 }));
    let rel = mc.h().as_matrix().sub(exact.h().as_matrix()).frob_norm() / exact.h().frob_norm();
    assert!(rel <= 0.05, "MC fisher off by {rel}");
}

#[test]
fn fisher_is_positive_semidefinite() {
    let model = ToyModel::random(&[5, 6, 4], 41).unwrap();
    let data = generate_dataset(
        5,
        &DataSpec { sequences: 10, tokens_per_sequence: 3, correlation: 0.5, seed: 41 },
    )
    .unwrap();
    let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, 0).unwrap();
    let eig = sym_eigen(h.h()).unwrap();
    let lmax = eig.lambda[0];
    assert!(*eig.lambda.last().unwrap() >= -1e-10 * lmax);
}

#[test]
fn kl_of_identical_models_is_zero() {
    let model = ToyModel::random(&[4, 5, 3], 51).unwrap();
    let data = generate_dataset(
        4,
        &DataSpec { sequences: 8, tokens_per_sequence: 2, correlation: 0.0, seed: 51 },
    )
    .unwrap();
    assert_eq!(kl_to_reference(&model, &model, &data).unwrap(), 0.0);
}

#[test]
fn kl_hand_computed_value() {
    // Reference head gives uniform (0.5, 0.5); compressed head gives
    // (0.9, 0.1). KL = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1).
    let reference = ToyModel::new(vec![Matrix::zeros(2, 1)]).unwrap();
    let mut w = Matrix::zeros(2, 1);
    w[(0, 0)] = 9.0f64.ln();
    let shifted = ToyModel::new(vec![w]).unwrap();
    let data = Dataset { sequences: vec![vec![vec![1.0]]] };
    let kl = kl_to_reference(&reference, &shifted, &data).unwrap();
    let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    assert!((kl - expect).abs() < 1e-12);
    assert!((kl - 0.510825623765991).abs() < 1e-9);
}

#[test]
fn kl_shrinks_to_zero_as_the_grid_refines() {
    let model = ToyModel::random(&[5, 6, 4], 61).unwrap();
    let data = generate_dataset(
        5,
        &DataSpec { sequences: 16, tokens_per_sequence: 2, correlation: 0.4, seed: 61 },
    )
    .unwrap();
    let mut prev = f64::INFINITY;
    for &step in &[0.5, 0.25, 0.125, 0.0625, 0.03125] {
        let spec = QuantizerSpec::new(23, RoundingMode::Nearest, ScalePolicy::Fixed(step));
        let q = quantize_nearest(model.layer(0), &spec).unwrap();
        let kl = kl_to_reference(&model, &model.with_layer(0, q.values).unwrap(), &data).unwrap();
        assert!(kl <= prev, "kl {kl} rose at step {step}");
        prev = kl;
    }
    assert!(prev <= 1e-3, "kl at the finest step: {prev}");
}

#[test]
fn fine_grid_nearest_rounding_keeps_kl_negligible() {
    // 16-bit-equivalent fine grid leaves the model essentially unchanged.
    let model = ToyModel::random(&[5, 6, 4], 71).unwrap();
    let data = generate_dataset(
        5,
        &DataSpec { sequences: 16, tokens_per_sequence: 2, correlation: 0.4, seed: 71 },
    )
    .unwrap();
    let spec = QuantizerSpec::new(23, RoundingMode::Nearest, ScalePolicy::Fixed(1e-5));
    let q = quantize_nearest(model.layer(0), &spec).unwrap();
    let kl = kl_to_reference(&model, &model.with_layer(0, q.values).unwrap(), &data).unwrap();
    assert!(kl <= 1e-8, "kl {kl}");
}

#[test]
fn second_order_error_identities() {
    let model = ToyModel::random(&[4, 5, 3], 81).unwrap();
    let w = model.layer(0).clone();
    let (m, n) = (w.rows(), w.cols());
    let h_eye = FisherEstimate::new(SymMatrix::eye(m * n), m, n, Provenance::ExactEnumeration);
    assert_eq!(second_order_error(&model, 0, &w, &h_eye).unwrap(), 0.0);
    let w_hat = w.add(&gen::random_matrix(m, n, 82).scale(0.1));
    let delta = w.sub(&w_hat);
    let soe = second_order_error(&model, 0, &w_hat, &h_eye).unwrap();
    let fro2 = delta.frob_norm() * delta.frob_norm();
    assert!((soe - fro2).abs() <= 1e-12 * fro2);
}

#[test]
fn model_save_load_round_trip() {
    let dir = std::env::temp_dir().join("yaqa_model_rt");
    let model = ToyModel::random(&[5, 7, 3], 13).unwrap();
    yaqa_core::model::save_model(&dir, &model, 13).unwrap();
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest_text.contains("\"activation\": \"tanh\""));
    let (back, manifest) = yaqa_core::model::load_model(&dir).unwrap();
    assert_eq!(manifest.dims, vec![5, 7, 3]);
    assert_eq!(manifest.seed, 13);
    for l in 0..2 {
        assert_eq!(model.layer(l), back.layer(l));
    }
}

#[test]
fn kl_taylor_agreement_with_half_quadratic() {
    let model = ToyModel::random(&[5, 6, 4], 91).unwrap();
    let data = generate_dataset(
        5,
        &DataSpec { sequences: 16, tokens_per_sequence: 2, correlation: 0.3, seed: 91 },
    )
    .unwrap();
    let h = true_layer_hessian(&model, 0, &data, LabelMode::Exact, 0).unwrap();
    let d = gen::random_matrix(6, 5, 92);
    let delta = d.scale(1.0 / d.frob_norm());
    let t = 1e-3;
    let w_t = model.layer(0).add(&delta.scale(t));
    let kl = kl_to_reference(&model, &model.with_layer(0, w_t.clone()).unwrap(), &data).unwrap();
    let quad = 0.5 * second_order_error(&model, 0, &w_t, &h).unwrap();
    let ratio = kl / quad;
    assert!((0.95..=1.05).contains(&ratio), "taylor ratio {ratio}");
}
