//! Adam, global-norm clipping and the learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Flat gradients by parameter name.
pub type Grads = BTreeMap<String, Vec<f64>>;

pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut BTreeMap<String, Vec<f64>>, grads: &Grads, lr: f64) -> Result<()> {
        if grads.values().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: vec![p.len()],
                    rhs: vec![g.len()],
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Linear warmup, then reduce-on-plateau with a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// Current post-warmup learning rate.
    pub lr: f64,
    pub factor: f64,
    pub min: f64,
    pub patience: usize,
    pub warmup_steps: usize,
    /// Best validation loss seen; `None` before the first epoch.
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, factor: f64, min: f64, patience: usize, warmup_steps: usize) -> Self {
        LrSchedule {
            lr,
            factor,
            min,
            patience,
            warmup_steps,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Rate for optimizer update number `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if (step as usize) < self.warmup_steps {
            self.lr * step as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }

    /// Records one validation loss; after `patience` epochs without a
    /// strict improvement the rate is multiplied by `factor`.
    pub fn epoch_end(&mut self, val_loss: f64) -> f64 {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
