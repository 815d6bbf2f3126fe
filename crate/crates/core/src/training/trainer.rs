//! The training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, EpochRecord, TrainState, FORMAT_VERSION};
use super::config::RunConfig;
use super::loss::{loss, record_loss};
use super::metrics::metrics;
use super::optim::{clip_gradients, AdamState, Grads, LrSchedule};
use crate::autodiff::{Fault, Graph, Tensor};
use crate::data::{fit_reference_energies, reference_sum, split, AtomicSystem};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, Prediction};

/// Below this a label spread is treated as zero.
const MIN_ENERGY_SCALE: f64 = 1e-12;

/// Output scale of the per-atom head: the spread of per-atom energy
/// residuals after the reference fit.
fn energy_scale(train: &[AtomicSystem], reference: &BTreeMap<u8, f64>) -> Result<f64> {
    let mut residuals = Vec::with_capacity(train.len());
    for s in train {
        let e = s.energy.ok_or(Error::MissingLabels("energy"))?;
        residuals.push((e - reference_sum(s, reference)?) / s.len() as f64);
    }
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(if std > MIN_ENERGY_SCALE { std } else { 1.0 })
}

pub struct Trainer {
    checkpoint: Checkpoint,
    systems: Vec<AtomicSystem>,
    fault: Option<Fault>,
}

impl Trainer {
    /// Splits the data, fits reference energies on the training split and
    /// initializes the model.
    pub fn new(mut config: RunConfig, systems: Vec<AtomicSystem>) -> Result<Self> {
        config.validate()?;
        for s in &systems {
            s.validate()?;
        }
        let tc = &config.train;
        let split = split(systems.len(), tc.split_sizes()?, tc.seed)?;
        if split.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let train: Vec<AtomicSystem> = split.train.iter().map(|&i| systems[i].clone()).collect();
        if config.model.elements.is_empty() {
            let mut z: Vec<u8> = train.iter().flat_map(|s| s.atomic_numbers.iter().copied()).collect();
            z.sort_unstable();
            z.dedup();
            config.model.elements = z;
        }
        let reference = fit_reference_energies(&train)?;
        let scale = energy_scale(&train, &reference)?;

        let mut model = Model::new(config.model.clone(), tc.seed)?;
        model.params.reference_energies = reference;
        model.params.energy_scale = scale;
        let state = TrainState {
            epoch: 0,
            step: 0,
            schedule: LrSchedule::new(tc.lr, tc.lr_factor, tc.lr_min, tc.lr_patience, tc.lr_warmup_steps),
            adam: AdamState::default(),
            best_val_loss: None,
            best_epoch: 0,
            since_improvement: 0,
            split,
        };
        Ok(Trainer {
            checkpoint: Checkpoint {
                format_version: FORMAT_VERSION,
                config,
                best: model.clone(),
                model,
                state,
                history: Vec::new(),
            },
            systems,
            fault: None,
        })
    }

    /// Continues from a checkpoint on the same dataset.
    pub fn resume(checkpoint: Checkpoint, systems: Vec<AtomicSystem>) -> Result<Self> {
        let split = &checkpoint.state.split;
        let len = split.train.len() + split.val.len() + split.test.len();
        if len != systems.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {len} systems, got {}",
                systems.len()
            )));
        }
        checkpoint.config.validate()?;
        Ok(Trainer {
            checkpoint,
            systems,
            fault: None,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.checkpoint
    }

    pub fn systems(&self) -> &[AtomicSystem] {
        &self.systems
    }

    pub fn set_max_epochs(&mut self, epochs: usize) {
        self.checkpoint.config.train.max_epochs = epochs;
    }

    /// Corrupts a derivative rule in every training graph (see [`Fault`]).
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn finished(&self) -> bool {
        let (tc, st) = (&self.checkpoint.config.train, &self.checkpoint.state);
        st.epoch >= tc.max_epochs || (st.epoch > 0 && st.since_improvement >= tc.early_stopping_patience)
    }

    /// Trains until `max_epochs` or early stopping, calling `on_epoch`
    /// after every epoch.
    pub fn train<E: From<Error>>(
        &mut self,
        mut on_epoch: impl FnMut(&Checkpoint, &EpochRecord) -> Result<(), E>,
    ) -> Result<(), E> {
        while !self.finished() {
            let record = self.run_epoch()?;
            on_epoch(&self.checkpoint, &record)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let tc = self.checkpoint.config.train.clone();
        let epoch = self.checkpoint.state.epoch;
        let mut order = self.checkpoint.state.split.train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(tc.seed, epoch)));

        let (mut loss_sum, mut max_norm) = (0.0, 0.0f64);
        for chunk in order.chunks(tc.batch_size) {
            let (l, norm) = self.step(chunk, epoch)?;
            loss_sum += l * chunk.len() as f64;
            max_norm = max_norm.max(norm);
        }
        let train_loss = loss_sum / order.len() as f64;

        let val_idx = if self.checkpoint.state.split.val.is_empty() {
            self.checkpoint.state.split.train.clone()
        } else {
            self.checkpoint.state.split.val.clone()
        };
        let val: Vec<&AtomicSystem> = val_idx.iter().map(|&i| &self.systems[i]).collect();
        let preds = predict_chunked(&self.checkpoint.model, &val, tc.batch_size)?;
        let val_loss = loss(&preds, &val, &tc)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: self.checkpoint.state.step as usize,
                batch: val_idx,
                grad_norm: f64::NAN,
            });
        }
        let m = metrics(&preds, &val)?;

        let ck = &mut self.checkpoint;
        let st = &mut ck.state;
        st.epoch += 1;
        let lr = st.schedule.epoch_end(val_loss);
        if st.best_val_loss.is_none_or(|b| val_loss < b) {
            st.best_val_loss = Some(val_loss);
            st.best_epoch = st.epoch;
            st.since_improvement = 0;
            ck.best = ck.model.clone();
        } else {
            st.since_improvement += 1;
        }
        let record = EpochRecord {
            epoch: st.epoch,
            lr,
            train_loss,
            val_loss,
            val_energy_mae: m.energy_mae,
            val_force_mae: m.force_mae.is_finite().then_some(m.force_mae),
            max_grad_norm: max_norm,
        };
        ck.history.push(record.clone());
        Ok(record)
    }

    /// One optimizer update; returns the batch loss and the pre-clip
    /// gradient norm.
    fn step(&mut self, indices: &[usize], epoch: usize) -> Result<(f64, f64)> {
        let ck = &mut self.checkpoint;
        let tc = &ck.config.train;
        let systems: Vec<&AtomicSystem> = indices.iter().map(|&i| &self.systems[i]).collect();
        let batch = ck.model.prepare(&systems)?;
        let mut g = Graph::new();
        g.inject_fault(self.fault);
        let non_finite = |step: u64, norm: f64| Error::NonFiniteLoss {
            epoch,
            step: step as usize,
            batch: indices.to_vec(),
            grad_norm: norm,
        };
        let recorded = ck.model.build(&mut g, &batch, true).and_then(|fwd| {
            let loss_var = record_loss(&mut g, &fwd, &systems, tc)?;
            let grads = g.backward(loss_var)?;
            Ok((fwd, g.value(loss_var).item(), grads))
        });
        let (fwd, loss_value, grads) = match recorded {
            Err(Error::NonFinite(_)) => return Err(non_finite(ck.state.step, f64::NAN)),
            r => r?,
        };

        let mut flat: Grads = BTreeMap::new();
        for (name, &var) in &fwd.params {
            if !ModelParams::is_trainable(name, &ck.model.config) {
                continue;
            }
            let data = match grads.get(var) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; ck.model.params.get(name).numel()],
            };
            flat.insert(name.clone(), data);
        }
        let norm = clip_gradients(&mut flat, tc.gradient_clipping);
        if !loss_value.is_finite() || !norm.is_finite() {
            return Err(non_finite(ck.state.step, norm));
        }

        let lr = ck.state.schedule.lr_at(ck.state.step + 1);
        let mut values: BTreeMap<String, Vec<f64>> = flat
            .keys()
            .map(|k| (k.clone(), ck.model.params.get(k).data().to_vec()))
            .collect();
        ck.state.adam.step(&mut values, &flat, lr)?;
        ck.state.step += 1;
        for (name, data) in values {
            let t = ck.model.params.tensors.get_mut(&name).expect("trainable parameter exists");
            *t = Tensor::new(t.shape().to_vec(), data)?;
        }
        Ok((loss_value, norm))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

/// Predictions in batches of `batch_size` systems.
pub fn predict_chunked(model: &Model, systems: &[&AtomicSystem], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(systems.len());
    for chunk in systems.chunks(batch_size.max(1)) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}
