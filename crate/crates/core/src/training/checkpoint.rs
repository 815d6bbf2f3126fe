//! JSON checkpoints of a training run.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::{AdamState, LrSchedule};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::Model;

pub const FORMAT_VERSION: u32 = 1;

/// Everything beyond the weights needed to continue a run bitwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer updates.
    pub step: u64,
    pub schedule: LrSchedule,
    pub adam: AdamState,
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    /// Epochs since the validation loss last improved.
    pub since_improvement: usize,
    pub split: DatasetSplit,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// meV
    pub val_energy_mae: f64,
    /// meV/Å; `None` without force labels.
    pub val_force_mae: Option<f64>,
    pub max_grad_norm: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\tlr\ttrain_loss\tval_loss\tval_energy_mae_meV\tval_force_mae_meV_per_A\tmax_grad_norm";

    pub fn tsv(&self) -> String {
        let f = self.val_force_mae.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{:.3e}\t{:.6e}\t{:.6e}\t{:.6}\t{}\t{:.4e}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_energy_mae, f, self.max_grad_norm
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    /// Weights after the last completed epoch.
    pub model: Model,
    /// Weights with the lowest validation loss.
    pub best: Model,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "{}: format_version {version:?}, expected {FORMAT_VERSION}",
                path.display()
            )));
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.model.validate()?;
        ck.best.validate()?;
        Ok(ck)
    }
}

/// Loads either a full checkpoint (returning its best weights) or a bare
/// model file.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let model: Model = if value.get("format_version").is_some() {
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.best
    } else {
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let text = serde_json::to_string(model).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
