//! Loss, optimizer, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_model, save_model, Checkpoint, EpochRecord, TrainState};
pub use config::{RunConfig, SizeSpec, TrainConfig};
pub use metrics::{evaluate_predictions, Evaluation, GroupBy, Metrics};
pub use trainer::{predict_chunked, Trainer};

use crate::data::AtomicSystem;
use crate::error::Result;
use crate::model::Model;

/// Predicts every system and reports metrics, optionally per attribute group.
pub fn evaluate(model: &Model, systems: &[&AtomicSystem], group_by: Option<GroupBy>) -> Result<Evaluation> {
    let preds = predict_chunked(model, systems, 32)?;
    evaluate_predictions(&preds, systems, group_by)
}
