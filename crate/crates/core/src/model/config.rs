use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which attribute ψ scales the interaction layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeMode {
    None,
    TotalCharge,
    Spin,
    PerAtomCharge,
}

impl AttributeMode {
    pub const NAMES: &'static [&'static str] = &["none", "total_charge", "spin", "per_atom_charge"];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "total_charge" => Ok(Self::TotalCharge),
            "spin" => Ok(Self::Spin),
            "per_atom_charge" => Ok(Self::PerAtomCharge),
            _ => Err(Error::Config(format!(
                "attribute_mode must be one of {}, got `{s}`",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Å
    pub cutoff_lower: f64,
    /// Å
    pub cutoff_upper: f64,
    pub num_channels: usize,
    pub num_layers: usize,
    pub num_rbf: usize,
    pub attribute_mode: AttributeMode,
    /// Initial λ_k for every layer.
    pub lambda: f64,
    /// Initial λ̃_k for every layer.
    pub lambda_tilde: f64,
    pub lambdas_learnable: bool,
    /// Atomic numbers the embedding table covers, ascending.
    pub elements: Vec<u8>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cutoff_lower: 0.0,
            cutoff_upper: 5.0,
            num_channels: 128,
            num_layers: 2,
            num_rbf: 32,
            attribute_mode: AttributeMode::None,
            lambda: 0.1,
            lambda_tilde: 0.1,
            lambdas_learnable: false,
            elements: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.cutoff_lower >= 0.0 && self.cutoff_upper > self.cutoff_lower && self.cutoff_upper.is_finite()) {
            return bad(format!(
                "need cutoff_upper > cutoff_lower >= 0, got {} and {}",
                self.cutoff_upper, self.cutoff_lower
            ));
        }
        if self.num_layers == 0 || self.num_rbf == 0 || self.num_channels == 0 {
            return bad("num_layers, num_rbf and embedding_dimension must be at least 1".into());
        }
        if !self.lambda.is_finite() || !self.lambda_tilde.is_finite() {
            return bad("lambda and lambda_tilde must be finite".into());
        }
        if self.elements.is_empty() {
            return bad("model covers no elements".into());
        }
        if self.elements.windows(2).any(|w| w[0] >= w[1]) {
            return bad("elements must be strictly ascending".into());
        }
        Ok(())
    }

    pub fn species_index(&self, z: u8) -> Result<usize> {
        self.elements.binary_search(&z).map_err(|_| Error::UnknownElement(z))
    }
}
