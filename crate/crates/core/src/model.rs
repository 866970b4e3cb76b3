//! Desk-scale feed-forward models with a softmax head. Small enough that the
//! exact per-layer Fisher of the KL objective is computable densely, which is
//! what makes the end-to-end claims checkable.

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::matrix::Matrix;
use crate::sketch::{FisherEstimate, Provenance};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Linear layers with elementwise tanh between them and a softmax head.
/// Layer ℓ maps dims[ℓ] -> dims[ℓ+1]; the last dimension is the class count.
#[derive(Debug, Clone)]
pub struct ToyModel {
    weights: Vec<Matrix>,
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input vector fed to each layer (post-activation of the previous one).
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs y_ℓ of each layer.
    pub preacts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn matvec(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows()];
    for i in 0..w.rows() {
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            acc += w[(i, j)] * xj;
        }
        out[i] = acc;
    }
    out
}

fn matvec_t(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for i in 0..w.rows() {
        let xi = x[i];
        for j in 0..w.cols() {
            out[j] += w[(i, j)] * xi;
        }
    }
    out
}

fn outer(u: &[f64], v: &[f64]) -> Matrix {
    Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl ToyModel {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::ShapeMismatch("model needs at least one layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].rows(),
                    pair[1].cols()
                )));
            }
        }
        if weights.last().unwrap().rows() < 2 {
            return Err(Error::ShapeMismatch("softmax head needs k >= 2 classes".into()));
        }
        Ok(ToyModel { weights })
    }

    /// Gaussian init scaled by 1/sqrt(fan_in).
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::ShapeMismatch("dims needs at least [in, classes]".into()));
        }
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|d| {
                let scale = 1.0 / (d[0] as f64).sqrt();
                Matrix::from_fn(d[1], d[0], |_, _| {
                    let g: f64 = r.sample(StandardNormal);
                    g * scale
                })
            })
            .collect();
        ToyModel::new(weights)
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn layer(&self, idx: usize) -> &Matrix {
        &self.weights[idx]
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.weights.iter().map(|w| w.cols()).collect();
        d.push(self.weights.last().unwrap().rows());
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn classes(&self) -> usize {
        self.weights.last().unwrap().rows()
    }

    /// Copy of the model with one layer's weights replaced.
    pub fn with_layer(&self, idx: usize, w: Matrix) -> Result<Self> {
        let old = &self.weights[idx];
        if (w.rows(), w.cols()) != (old.rows(), old.cols()) {
            return Err(Error::ShapeMismatch(format!(
                "layer {idx} expects {}x{}, got {}x{}",
                old.rows(),
                old.cols(),
                w.rows(),
                w.cols()
            )));
        }
        let mut weights = self.weights.clone();
        weights[idx] = w;
        ToyModel::new(weights)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} != model dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut preacts = Vec::with_capacity(self.weights.len());
        let mut cur = x.to_vec();
        for (l, w) in self.weights.iter().enumerate() {
            layer_inputs.push(cur.clone());
            let y = matvec(w, &cur);
            preacts.push(y.clone());
            cur = if l == last { y } else { y.iter().map(|v| v.tanh()).collect() };
        }
        let probs = softmax(&cur);
        Ok(ForwardTrace { layer_inputs, preacts, logits: cur, probs })
    }

    /// Gradient of the cross entropy at `label` with respect to one layer's
    /// weights. Exact backpropagation.
    pub fn layer_grad(&self, layer: usize, x: &[f64], label: usize) -> Result<Matrix> {
        let tr = self.forward(x)?;
        if label >= self.classes() {
            return Err(Error::ShapeMismatch(format!(
                "label {label} out of range for k={}",
                self.classes()
            )));
        }
        let mut delta: Vec<f64> = tr.probs.clone();
        delta[label] -= 1.0;
        // delta = dL/dy_j, walked from the head down to `layer`.
        for j in (layer + 1..self.weights.len()).rev() {
            let back = matvec_t(&self.weights[j], &delta);
            let z: Vec<f64> = tr.preacts[j - 1].iter().map(|v| v.tanh()).collect();
            delta = back.iter().zip(&z).map(|(b, zi)| b * (1.0 - zi * zi)).collect();
        }
        Ok(outer(&delta, &tr.layer_inputs[layer]))
    }

    /// Linear map B (m×k) taking a logits gradient to the gradient at layer
    /// `layer`'s pre-activation output, for the forward pass in `tr`.
    fn backprop_map(&self, layer: usize, tr: &ForwardTrace) -> Matrix {
        let k = self.classes();
        let mut b = Matrix::eye(k);
        for j in (layer + 1..self.weights.len()).rev() {
            let wt_b = self.weights[j].transpose().matmul(&b);
            let z: Vec<f64> = tr.preacts[j - 1].iter().map(|v| v.tanh()).collect();
            b = Matrix::from_fn(wt_b.rows(), wt_b.cols(), |i, c| {
                wt_b[(i, c)] * (1.0 - z[i] * z[i])
            });
        }
        b
    }

    /// Exact label-enumerated output-side curvature at the layer output:
    /// B·(diag(p) − p pᵀ)·Bᵀ, equal to Σ_label p_label ĝ ĝᵀ.
    pub fn output_curvature(&self, layer: usize, tr: &ForwardTrace) -> Matrix {
        let b = self.backprop_map(layer, tr);
        let k = self.classes();
        let p = &tr.probs;
        let fisher_head = Matrix::from_fn(k, k, |i, j| {
            if i == j {
                p[i] - p[i] * p[j]
            } else {
                -p[i] * p[j]
            }
        });
        b.matmul(&fisher_head).matmul(&b.transpose())
    }

    /// Gradient at the layer output for one sampled label: B·(p − e_label).
    pub fn output_grad(&self, layer: usize, tr: &ForwardTrace, label: usize) -> Vec<f64> {
        let b = self.backprop_map(layer, tr);
        let mut d = tr.probs.clone();
        d[label] -= 1.0;
        matvec(&b, &d)
    }
}

/// How label expectations are taken when estimating Fisher information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Enumerate all classes weighted by the reference softmax.
    Exact,
    /// One Monte-Carlo label per token from the reference softmax.
    #[serde(rename = "mc")]
    MonteCarlo,
}

/// Draw a label from a categorical distribution.
pub fn sample_label(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Inputs grouped into "sequences": correlated example groups standing in
/// for tokens that share context.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn tokens(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.sequences.iter().flatten()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSpec {
    pub sequences: usize,
    pub tokens_per_sequence: usize,
    /// Within-sequence correlation in [0, 1]: fraction of each token's
    /// latent shared across the sequence.
    pub correlation: f64,
    pub seed: u64,
}

/// Standard Gaussian latents pushed through a fixed mixing matrix drawn once
/// from the seed; tokens in a sequence share a latent component.
pub fn generate_dataset(d_in: usize, spec: &DataSpec) -> Result<Dataset> {
    if spec.sequences == 0 || spec.tokens_per_sequence == 0 {
        return Err(Error::EmptyData("dataset spec with zero sequences or tokens".into()));
    }
    if !(0.0..=1.0).contains(&spec.correlation) {
        return Err(Error::ShapeMismatch(format!(
            "correlation {} outside [0,1]",
            spec.correlation
        )));
    }
    let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
    let mixing = Matrix::from_fn(d_in, d_in, |i, j| {
        let g: f64 = r.sample(StandardNormal);
        g / (d_in as f64).sqrt() + if i == j { 0.75 } else { 0.0 }
    });
    let rho = spec.correlation;
    let mut sequences = Vec::with_capacity(spec.sequences);
    for _ in 0..spec.sequences {
        let shared: Vec<f64> = (0..d_in).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let mut seq = Vec::with_capacity(spec.tokens_per_sequence);
        for _ in 0..spec.tokens_per_sequence {
            let latent: Vec<f64> = shared
                .iter()
                .map(|&s| {
                    let e: f64 = r.sample(StandardNormal);
                    rho.sqrt() * s + (1.0 - rho).sqrt() * e
                })
                .collect();
            seq.push(matvec(&mixing, &latent));
        }
        sequences.push(seq);
    }
    Ok(Dataset { sequences })
}

/// Exact real Fisher of one layer at the reference weights, assembled
/// densely: mean over tokens of G(x) ⊗ u uᵀ with G the label-enumerated
/// output curvature. This is the Gauss-Newton Hessian of the KL objective.
pub fn true_layer_hessian(
    model: &ToyModel,
    layer: usize,
    data: &Dataset,
    mode: LabelMode,
    seed: u64,
) -> Result<FisherEstimate> {
    let w = model.layer(layer);
    let (m, n) = (w.rows(), w.cols());
    let mn = m * n;
    if mn > 4096 {
        return Err(Error::TooLarge(format!("dense Fisher for mn = {mn} > 4096")));
    }
    let count = data.token_count();
    if count == 0 {
        return Err(Error::EmptyData("true_layer_hessian with no tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Matrix::zeros(mn, mn);
    for x in data.tokens() {
        let tr = model.forward(x)?;
        let u = &tr.layer_inputs[layer];
        let g = match mode {
            LabelMode::Exact => model.output_curvature(layer, &tr),
            LabelMode::MonteCarlo => {
                let label = sample_label(&tr.probs, &mut rng);
                let gvec = model.output_grad(layer, &tr, label);
                outer(&gvec, &gvec)
            }
        };
        let uut = outer(u, u);
        acc = acc.add(&crate::linalg::kron(&g, &uut));
    }
    let h = SymMatrix::symmetrize(&acc.scale(1.0 / count as f64));
    Ok(FisherEstimate::new(
        h,
        m,
        n,
        match mode {
            LabelMode::Exact => Provenance::ExactEnumeration,
            LabelMode::MonteCarlo => Provenance::MonteCarlo { samples: count },
        },
    ))
}

/// Mean KL from the reference model's output distribution to the compressed
/// model's, over all tokens in the dataset.
pub fn kl_to_reference(model_ref: &ToyModel, model_q: &ToyModel, data: &Dataset) -> Result<f64> {
    if model_ref.dims() != model_q.dims() {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for x in data.tokens() {
        let pr = model_ref.forward(x)?.probs;
        let pq = model_q.forward(x)?.probs;
        let mut kl = 0.0;
        for (a, b) in pr.iter().zip(&pq) {
            if *a > 0.0 {
                kl += a * (a / b.max(1e-300)).ln();
            }
        }
        total += kl;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyData("kl_to_reference with no tokens".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dims: Vec<usize>,
    pub activation: String,
    pub seed: u64,
}

/// Write the layers as containers plus a JSON manifest.
pub fn save_model(dir: &std::path::Path, model: &ToyModel, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, w) in (0..model.layer_count()).map(|i| (i, model.layer(i))) {
        crate::container::write_matrix(&dir.join(format!("layer_{i}.krnd")), w)?;
    }
    let manifest = ModelManifest { dims: model.dims(), activation: "tanh".into(), seed };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn load_model(dir: &std::path::Path) -> Result<(ToyModel, ModelManifest)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.activation != "tanh" {
        return Err(Error::Format(format!(
            "unsupported activation '{}'",
            manifest.activation
        )));
    }
    let layers = manifest.dims.len() - 1;
    let weights = (0..layers)
        .map(|i| crate::container::read_matrix(&dir.join(format!("layer_{i}.krnd"))))
        .collect::<Result<Vec<_>>>()?;
    let model = ToyModel::new(weights)?;
    if model.dims() != manifest.dims {
        return Err(Error::Format("manifest dims do not match stored layers".into()));
    }
    Ok((model, manifest))
}

/// vec(Δ)·H·vec(Δ)ᵀ for Δ = W*_layer − W_hat. The ½ of the second-order
/// Taylor model is reported separately by callers.
pub fn second_order_error(
    model_ref: &ToyModel,
    layer: usize,
    w_hat: &Matrix,
    h: &FisherEstimate,
) -> Result<f64> {
    let w = model_ref.layer(layer);
    if (w.rows(), w.cols()) != (w_hat.rows(), w_hat.cols()) {
        return Err(Error::ShapeMismatch("w_hat shape differs from the layer".into()));
    }
    let delta = w.sub(w_hat);
    h.quad_form(&delta)
}
