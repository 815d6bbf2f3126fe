//! `y_weight · MSE(energy) + neg_dy_weight · MSE(force components)`.

use super::config::TrainConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::AtomicSystem;
use crate::error::{Error, Result};
use crate::model::{Forward, Prediction};

fn energy_labels(systems: &[&AtomicSystem]) -> Result<Vec<f64>> {
    systems
        .iter()
        .map(|s| s.energy.ok_or(Error::MissingLabels("energy")))
        .collect()
}

fn force_labels(systems: &[&AtomicSystem]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for s in systems {
        let f = s
            .forces
            .as_ref()
            .ok_or(Error::MissingLabels("forces (needed because neg_dy_weight > 0)"))?;
        out.extend(f.iter().flatten());
    }
    Ok(out)
}

/// Loss of finished predictions against labels.
pub fn loss(predictions: &[Prediction], systems: &[&AtomicSystem], config: &TrainConfig) -> Result<f64> {
    let e = energy_labels(systems)?;
    let e_mse = predictions
        .iter()
        .zip(&e)
        .map(|(p, l)| (p.energy - l).powi(2))
        .sum::<f64>()
        / e.len() as f64;
    let mut total = config.y_weight * e_mse;
    if config.uses_forces() {
        let f = force_labels(systems)?;
        let f_mse = predictions
            .iter()
            .flat_map(|p| p.forces.iter().flatten())
            .zip(&f)
            .map(|(p, l)| (p - l).powi(2))
            .sum::<f64>()
            / f.len() as f64;
        total += config.neg_dy_weight * f_mse;
    }
    Ok(total)
}

/// Records the loss on the tape. Forces are taken as `−∂E/∂r` with the
/// gradient itself recorded, so the loss can be differentiated again.
pub fn record_loss(g: &mut Graph, fwd: &Forward, systems: &[&AtomicSystem], config: &TrainConfig) -> Result<Var> {
    let b = systems.len();
    let labels = g.constant(Tensor::new(vec![b, 1], energy_labels(systems)?)?);
    let diff = g.sub(fwd.energy, labels)?;
    let sq = g.mul(diff, diff)?;
    let sum = g.sum_all(sq)?;
    let mut total = g.scale(sum, config.y_weight / b as f64)?;
    if config.uses_forces() {
        let f = force_labels(systems)?;
        let n = f.len();
        let e_total = g.sum_all(fwd.energy)?;
        let de = g.grad(e_total, &[fwd.positions])?[0];
        // F − F_label = −(∂E/∂r + F_label)
        let labels = g.constant(Tensor::new(vec![n / 3, 3], f)?);
        let diff = g.add(de, labels)?;
        let sq = g.mul(diff, diff)?;
        let sum = g.sum_all(sq)?;
        let term = g.scale(sum, config.neg_dy_weight / n as f64)?;
        total = g.add(total, term)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(e: f64, f: Vec<[f64; 3]>) -> AtomicSystem {
        let n = f.len();
        let mut s = AtomicSystem::new(vec![1; n], (0..n).map(|i| [i as f64, 0.0, 0.0]).collect());
        s.energy = Some(e);
        s.forces = Some(f);
        s
    }

    #[test]
    fn perfect_and_energy_only_errors() {
        let c = TrainConfig::default();
        let s = labelled(-3.0, vec![[0.1, 0.2, 0.3], [-0.1, -0.2, -0.3]]);
        let exact = Prediction {
            energy: -3.0,
            forces: s.forces.clone().unwrap(),
        };
        assert_eq!(loss(&[exact.clone()], &[&s], &c).unwrap(), 0.0);
        let off = Prediction {
            energy: -3.0 + 0.25,
            ..exact
        };
        assert_eq!(loss(&[off], &[&s], &c).unwrap(), c.y_weight * 0.0625);
    }

    #[test]
    fn two_sample_batch_by_hand() {
        let c = TrainConfig {
            y_weight: 2.0,
            neg_dy_weight: 10.0,
            ..TrainConfig::default()
        };
        let a = labelled(1.0, vec![[1.0, 0.0, 0.0]]);
        let b = labelled(-2.0, vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let pa = Prediction {
            energy: 1.5,
            forces: vec![[1.0, 0.5, 0.0]],
        };
        let pb = Prediction {
            energy: -2.0,
            forces: vec![[0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
        };
        // energies: (0.25 + 0) / 2 = 0.125; forces: (0.25 + 4) / 9
        let expected = 2.0 * 0.125 + 10.0 * (4.25 / 9.0);
        assert!((loss(&[pa, pb], &[&a, &b], &c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_forces_is_an_error_only_when_weighted() {
        let mut s = labelled(0.0, vec![[0.0; 3]]);
        s.forces = None;
        let p = Prediction {
            energy: 0.0,
            forces: vec![[0.0; 3]],
        };
        assert!(loss(&[p.clone()], &[&s], &TrainConfig::default()).is_err());
        let no_forces = TrainConfig {
            derivative: false,
            ..TrainConfig::default()
        };
        assert_eq!(loss(&[p], &[&s], &no_forces).unwrap(), 0.0);
    }
}
