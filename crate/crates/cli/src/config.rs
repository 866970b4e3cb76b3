//! Config schemas for the subcommands. Validation reports the offending
//! field path so bad configs fail fast with exit code 1.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use yaqa_core::model::{DataSpec, LabelMode};
use yaqa_core::quantize::QuantizerSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self, path: &str) -> Result<(), String> {
        if self.dims.len() < 2 {
            return Err(format!("{path}.dims: need at least [input, classes]"));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(format!("{path}.dims: dimensions must be positive"));
        }
        if *self.dims.last().unwrap() < 2 {
            return Err(format!("{path}.dims: softmax head needs >= 2 classes"));
        }
        Ok(())
    }
}

pub fn validate_data(spec: &DataSpec, path: &str) -> Result<(), String> {
    if spec.sequences == 0 {
        return Err(format!("{path}.sequences: must be >= 1"));
    }
    if spec.tokens_per_sequence == 0 {
        return Err(format!("{path}.tokens_per_sequence: must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.correlation) {
        return Err(format!("{path}.correlation: must be in [0, 1]"));
    }
    Ok(())
}

pub fn validate_quantizer(spec: &QuantizerSpec, path: &str) -> Result<(), String> {
    spec.validate().map_err(|e| format!("{path}: {e}"))
}

fn default_reg() -> f64 {
    1e-4
}

fn default_iters() -> usize {
    3
}

fn default_labels() -> LabelMode {
    LabelMode::MonteCarlo
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundConfig {
    pub weights: PathBuf,
    #[serde(default)]
    pub h_i: Option<PathBuf>,
    #[serde(default)]
    pub h_o: Option<PathBuf>,
    /// One of: nearest | ldlq | yaqa | yaqa-wavefront | guidedquant:<g>.
    pub algorithm: String,
    pub quantizer: QuantizerSpec,
    #[serde(default)]
    pub group_hessians: Vec<PathBuf>,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ip: bool,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), String> {
        validate_quantizer(&self.quantizer, "quantizer")?;
        let algo = self.algorithm.as_str();
        let known = algo == "nearest"
            || algo == "ldlq"
            || algo == "yaqa"
            || algo == "yaqa-wavefront"
            || algo.starts_with("guidedquant:");
        if !known {
            return Err(format!(
                "algorithm: unknown '{algo}' (nearest|ldlq|yaqa|yaqa-wavefront|guidedquant:<g>)"
            ));
        }
        if algo.starts_with("guidedquant:") {
            let g: usize = algo["guidedquant:".len()..]
                .parse()
                .map_err(|_| "algorithm: guidedquant group count must be an integer".to_string())?;
            if g == 0 {
                return Err("algorithm: guidedquant group count must be >= 1".into());
            }
            if self.group_hessians.is_empty() {
                return Err("group_hessians: required for guidedquant".into());
            }
            if self.group_hessians.len() != g {
                return Err(format!(
                    "group_hessians: expected {g} paths, got {}",
                    self.group_hessians.len()
                ));
            }
        } else if algo != "nearest" && self.h_i.is_none() {
            return Err("h_i: required unless algorithm is nearest".into());
        }
        if self.reg < 0.0 {
            return Err("reg: must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub layer: usize,
    pub data: DataSpec,
    /// One of: ldlq | a | b | powerfull | vanloan.
    pub method: String,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_labels")]
    pub labels: LabelMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ip: bool,
}

impl SketchConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate("model")?;
        validate_data(&self.data, "data")?;
        if self.layer + 1 >= self.model.dims.len() {
            return Err(format!(
                "layer: {} out of range for {} layers",
                self.layer,
                self.model.dims.len() - 1
            ));
        }
        match self.method.as_str() {
            "ldlq" | "a" | "b" | "powerfull" | "vanloan" => Ok(()),
            other => Err(format!("method: unknown '{other}' (ldlq|a|b|powerfull|vanloan)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheckConfig {
    pub instances: usize,
    /// Mix in 2×2-tile instances on odd indices.
    #[serde(default)]
    pub include_blocked: bool,
    #[serde(default)]
    pub seed: u64,
}

impl BoundCheckConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.instances == 0 {
            return Err("instances: must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchChoice {
    /// One of: ldlq | a | b | powerfull | vanloan.
    pub method: String,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_labels")]
    pub labels: LabelMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    pub sketch: SketchChoice,
    pub quantizer: QuantizerSpec,
    #[serde(default)]
    pub layer: usize,
    #[serde(default)]
    pub incoherence: bool,
    /// Entries: nearest | ldlq | guidedquant:<g> | yaqa | yaqa-wavefront.
    pub algorithms: Vec<String>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reg")]
    pub reg: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate("model")?;
        validate_data(&self.data, "data")?;
        validate_quantizer(&self.quantizer, "quantizer")?;
        if self.layer + 1 >= self.model.dims.len() {
            return Err(format!(
                "layer: {} out of range for {} layers",
                self.layer,
                self.model.dims.len() - 1
            ));
        }
        match self.sketch.method.as_str() {
            "ldlq" | "a" | "b" | "powerfull" | "vanloan" => {}
            other => {
                return Err(format!(
                    "sketch.method: unknown '{other}' (ldlq|a|b|powerfull|vanloan)"
                ))
            }
        }
        if self.algorithms.is_empty() {
            return Err("algorithms: must list at least one algorithm".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            let ok = a == "nearest"
                || a == "ldlq"
                || a == "yaqa"
                || a == "yaqa-wavefront"
                || a.starts_with("guidedquant:");
            if !ok {
                return Err(format!("algorithms[{i}]: unknown '{a}'"));
            }
            if let Some(g) = a.strip_prefix("guidedquant:") {
                let g: usize = g
                    .parse()
                    .map_err(|_| format!("algorithms[{i}]: group count must be an integer"))?;
                let m = self.model.dims[self.layer + 1];
                if g == 0 || m % g != 0 {
                    return Err(format!(
                        "algorithms[{i}]: group count {g} must divide m = {m}"
                    ));
                }
            }
        }
        if self.trials == 0 {
            return Err("trials: must be >= 1".into());
        }
        if self.incoherence {
            let m = self.model.dims[self.layer + 1];
            let n = self.model.dims[self.layer];
            if !m.is_power_of_two() || !n.is_power_of_two() {
                return Err(format!(
                    "incoherence: layer shape {m}x{n} must have power-of-two dimensions"
                ));
            }
        }
        if self.reg < 0.0 {
            return Err("reg: must be nonnegative".into());
        }
        Ok(())
    }
}

pub fn load_config<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}
