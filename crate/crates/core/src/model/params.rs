use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PARTS: [&str; 3] = ["I", "A", "S"];

/// Learnable weights by name plus the fixed per-element energy offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    /// eV per atom of each element.
    pub reference_energies: BTreeMap<u8, f64>,
    /// eV; multiplies the head output. Not learned.
    pub energy_scale: f64,
}

/// Every parameter name with its shape and fan-in (0 for biases, which
/// start at zero, and for λ).
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let (c, k, s) = (config.num_channels, config.num_rbf, config.elements.len());
    let mut out = vec![
        ("embedding".to_string(), vec![s, c], 1),
        ("embed.pair_i".into(), vec![c, c], 2 * c),
        ("embed.pair_j".into(), vec![c, c], 2 * c),
        ("embed.pair_b".into(), vec![c], 0),
    ];
    for p in PARTS {
        out.push((format!("embed.rbf_{p}"), vec![k, c], k));
        out.push((format!("embed.mix_{p}"), vec![c, c], c));
        out.push((format!("embed.gate_{p}"), vec![c, c], c));
        out.push((format!("embed.gate_b_{p}"), vec![c], 0));
    }
    for l in 0..config.num_layers {
        for p in PARTS {
            out.push((format!("layer{l}.rbf_{p}"), vec![k, c], k));
            out.push((format!("layer{l}.y_{p}"), vec![c, c], c));
            out.push((format!("layer{l}.dx_{p}"), vec![c, c], c));
        }
        out.push((format!("layer{l}.lambda"), vec![1], 0));
        out.push((format!("layer{l}.lambda_tilde"), vec![1], 0));
    }
    for p in PARTS {
        out.push((format!("head.w1_{p}"), vec![c, c], 3 * c));
    }
    out.push(("head.b1".into(), vec![c], 0));
    out.push(("head.w2".into(), vec![c, 1], c));
    out.push(("head.b2".into(), vec![1], 0));
    out
}

impl ModelParams {
    /// Gaussian weights with variance 1/fan-in, zero biases, and λ from the config.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, fan_in) in layout(config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".lambda") {
                vec![config.lambda]
            } else if name.ends_with(".lambda_tilde") {
                vec![config.lambda_tilde]
            } else if fan_in == 0 {
                vec![0.0; n]
            } else {
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ModelParams {
            tensors,
            reference_energies: config.elements.iter().map(|&z| (z, 0.0)).collect(),
            energy_scale: 1.0,
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    /// Whether the optimizer updates `name`.
    pub fn is_trainable(name: &str, config: &ModelConfig) -> bool {
        let is_lambda = name.ends_with(".lambda") || name.ends_with(".lambda_tilde");
        !is_lambda || config.lambdas_learnable
    }

    /// Checks names, shapes and finiteness against `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in expected {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter {name} has shape {:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("parameter"));
            }
        }
        if !self.energy_scale.is_finite() || self.reference_energies.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference energy"));
        }
        Ok(())
    }

    pub fn zero_head(&mut self) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with("head.") {
                t.data_mut().fill(0.0);
            }
        }
    }
}
