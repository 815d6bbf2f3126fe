//! Flat key-value run configuration. Keys match the hyperparameter tables
//! (`lr 1e-3`, `num_rbf: 32`, `derivative = True`, ...) plus a few model
//! extensions.

use serde::{Deserialize, Serialize};

use crate::data::SplitSizes;
use crate::error::{Error, Result};
use crate::keyvalue::{self, parse_bool, parse_value};
use crate::model::{AttributeMode, ModelConfig};

pub const VALID_KEYS: &[&str] = &[
    "activation",
    "attribute_mode",
    "batch_size",
    "cutoff_lower",
    "cutoff_upper",
    "derivative",
    "early_stopping_patience",
    "embedding_dimension",
    "equivariance_invariance_group",
    "gradient_clipping",
    "lambda",
    "lambda_tilde",
    "lambdas_learnable",
    "lr",
    "lr_factor",
    "lr_min",
    "lr_patience",
    "lr_warmup_steps",
    "max_epochs",
    "neg_dy_weight",
    "num_layers",
    "num_rbf",
    "seed",
    "train_size",
    "val_size",
    "y_weight",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_min: f64,
    /// Epochs without improvement before the learning rate drops.
    pub lr_patience: usize,
    pub lr_warmup_steps: usize,
    pub early_stopping_patience: usize,
    /// Maximum global gradient norm.
    pub gradient_clipping: f64,
    pub y_weight: f64,
    pub neg_dy_weight: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Train on forces as well as energies.
    pub derivative: bool,
    pub train_size: SizeSpec,
    pub val_size: SizeSpec,
}

/// A split size given as a fraction (`0.5`) or a count (`800`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SizeSpec {
    Fraction(f64),
    Count(usize),
}

impl SizeSpec {
    fn parse(key: &str, value: &str) -> Result<Self> {
        if let Ok(n) = value.parse::<usize>() {
            return Ok(SizeSpec::Count(n));
        }
        Ok(SizeSpec::Fraction(parse_value(key, value)?))
    }

    fn render(self) -> String {
        match self {
            SizeSpec::Fraction(f) => format!("{f:?}"),
            SizeSpec::Count(n) => n.to_string(),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            lr_factor: 0.5,
            lr_min: 1e-7,
            lr_patience: 15,
            lr_warmup_steps: 0,
            early_stopping_patience: 100,
            gradient_clipping: 40.0,
            y_weight: 1.0,
            neg_dy_weight: 10.0,
            max_epochs: 100,
            seed: 1,
            derivative: true,
            train_size: SizeSpec::Fraction(0.5),
            val_size: SizeSpec::Fraction(0.1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > self.lr_min && self.lr_min > 0.0 && self.lr.is_finite()) {
            return bad("need lr > lr_min > 0");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("need 0 < lr_factor < 1");
        }
        if !(self.y_weight >= 0.0 && self.neg_dy_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.gradient_clipping > 0.0) {
            return bad("gradient_clipping must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> Result<SplitSizes> {
        match (self.train_size, self.val_size) {
            (SizeSpec::Fraction(train), SizeSpec::Fraction(val)) => Ok(SplitSizes::Fractions { train, val }),
            (SizeSpec::Count(train), SizeSpec::Count(val)) => Ok(SplitSizes::Counts { train, val }),
            _ => Err(Error::Config("train_size and val_size must both be fractions or both counts".into())),
        }
    }

    /// Whether the loss has a force term.
    pub fn uses_forces(&self) -> bool {
        self.derivative && self.neg_dy_weight > 0.0
    }
}

/// Model and training settings read from one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in keyvalue::parse(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut probe = self.model.clone();
        if probe.elements.is_empty() {
            probe.elements = vec![1];
        }
        probe.validate()
    }

    /// Applies one `key value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "activation" => {
                if value != "silu" {
                    return Err(Error::Config(format!("only activation silu is supported, got `{value}`")));
                }
            }
            "equivariance_invariance_group" => {
                if !value.eq_ignore_ascii_case("O(3)") {
                    return Err(Error::Config(format!(
                        "only equivariance_invariance_group O(3) is supported, got `{value}`"
                    )));
                }
            }
            "attribute_mode" => m.attribute_mode = AttributeMode::parse(value)?,
            "cutoff_lower" => m.cutoff_lower = parse_value(key, value)?,
            "cutoff_upper" => m.cutoff_upper = parse_value(key, value)?,
            "embedding_dimension" => m.num_channels = parse_value(key, value)?,
            "num_layers" => m.num_layers = parse_value(key, value)?,
            "num_rbf" => m.num_rbf = parse_value(key, value)?,
            "lambda" => m.lambda = parse_value(key, value)?,
            "lambda_tilde" => m.lambda_tilde = parse_value(key, value)?,
            "lambdas_learnable" => m.lambdas_learnable = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "derivative" => t.derivative = parse_bool(key, value)?,
            "early_stopping_patience" => t.early_stopping_patience = parse_value(key, value)?,
            "gradient_clipping" => t.gradient_clipping = parse_value(key, value)?,
            "lr" => t.lr = parse_value(key, value)?,
            "lr_factor" => t.lr_factor = parse_value(key, value)?,
            "lr_min" => t.lr_min = parse_value(key, value)?,
            "lr_patience" => t.lr_patience = parse_value(key, value)?,
            "lr_warmup_steps" => t.lr_warmup_steps = parse_value(key, value)?,
            "max_epochs" => t.max_epochs = parse_value(key, value)?,
            "neg_dy_weight" => t.neg_dy_weight = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "train_size" => t.train_size = SizeSpec::parse(key, value)?,
            "val_size" => t.val_size = SizeSpec::parse(key, value)?,
            "y_weight" => t.y_weight = parse_value(key, value)?,
            _ => return Err(keyvalue::unknown_key(key, VALID_KEYS)),
        }
        Ok(())
    }

    /// Every key with its current value, in key order.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let py = |b: bool| if b { "True" } else { "False" }.to_string();
        let entries: Vec<(String, String)> = vec![
            ("activation", "silu".to_string()),
            ("attribute_mode", m.attribute_mode.name().to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("cutoff_lower", format!("{:?}", m.cutoff_lower)),
            ("cutoff_upper", format!("{:?}", m.cutoff_upper)),
            ("derivative", py(t.derivative)),
            ("early_stopping_patience", t.early_stopping_patience.to_string()),
            ("embedding_dimension", m.num_channels.to_string()),
            ("equivariance_invariance_group", "O(3)".to_string()),
            ("gradient_clipping", format!("{:?}", t.gradient_clipping)),
            ("lambda", format!("{:?}", m.lambda)),
            ("lambda_tilde", format!("{:?}", m.lambda_tilde)),
            ("lambdas_learnable", py(m.lambdas_learnable)),
            ("lr", format!("{:?}", t.lr)),
            ("lr_factor", format!("{:?}", t.lr_factor)),
            ("lr_min", format!("{:?}", t.lr_min)),
            ("lr_patience", t.lr_patience.to_string()),
            ("lr_warmup_steps", t.lr_warmup_steps.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("neg_dy_weight", format!("{:?}", t.neg_dy_weight)),
            ("num_layers", m.num_layers.to_string()),
            ("num_rbf", m.num_rbf.to_string()),
            ("seed", t.seed.to_string()),
            ("train_size", t.train_size.render()),
            ("val_size", t.val_size.render()),
            ("y_weight", format!("{:?}", t.y_weight)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        entries.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
    }
}
