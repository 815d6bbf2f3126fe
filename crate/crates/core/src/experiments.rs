//! Property suites and benchmarks shared by the command-line tool and the
//! test harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::random::random_system;
use crate::data::AtomicSystem;
use crate::error::{Error, Result};
use crate::model::{AttributeMode, Model};
use crate::tensor::{random_orthogonal, Mat3};

/// Atoms per Å³ used for random probe systems and the scaling benchmark.
pub const PROBE_DENSITY: f64 = 0.05;
/// Å
pub const PROBE_MIN_DISTANCE: f64 = 0.9;

/// A random system over the model's elements with random attributes.
pub fn random_probe<R: Rng>(model: &Model, rng: &mut R, atoms: usize) -> AtomicSystem {
    let mut s = random_system(rng, atoms, &model.config.elements, PROBE_DENSITY, PROBE_MIN_DISTANCE);
    s.total_charge = rng.random_range(-1..=1) as f64;
    s.spin = rng.random_range(0..=1);
    if model.config.attribute_mode == AttributeMode::PerAtomCharge {
        s.per_atom_charges = Some((0..atoms).map(|_| rng.random_range(-0.5..0.5)).collect());
    }
    s
}

fn max_abs(a: &[[f64; 3]]) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EquivarianceTolerances {
    /// Absolute, per feature entry.
    pub feature: f64,
    /// Relative to |E|.
    pub energy: f64,
    /// Relative to the largest force component.
    pub force: f64,
    /// Relative, for atom reordering.
    pub permutation: f64,
}

impl Default for EquivarianceTolerances {
    fn default() -> Self {
        EquivarianceTolerances {
            feature: 1e-10,
            energy: 1e-9,
            force: 1e-9,
            permutation: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EquivarianceReport {
    pub trials: usize,
    pub rotations: usize,
    pub reflections: usize,
    /// Largest feature deviation from `R X Rᵀ` (proper `R`) or `R Xᵀ Rᵀ`
    /// (improper `R`).
    pub feature_dev: f64,
    /// Largest deviation from the plain `R X Rᵀ` law under improper `R`.
    pub literal_reflection_dev: f64,
    pub energy_rel_dev: f64,
    pub force_rel_dev: f64,
    pub translation_energy_rel_dev: f64,
    pub translation_force_rel_dev: f64,
    pub permutation_energy_rel_dev: f64,
    pub permutation_force_rel_dev: f64,
}

impl EquivarianceReport {
    /// Names of the checks that exceed their tolerance.
    pub fn violations(&self, tol: &EquivarianceTolerances) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, value, bound) in [
            ("features", self.feature_dev, tol.feature),
            ("energy", self.energy_rel_dev, tol.energy),
            ("forces", self.force_rel_dev, tol.force),
            ("translation energy", self.translation_energy_rel_dev, tol.energy),
            ("translation forces", self.translation_force_rel_dev, tol.force),
            ("permutation energy", self.permutation_energy_rel_dev, tol.permutation),
            ("permutation forces", self.permutation_force_rel_dev, tol.permutation),
        ] {
            if !(value <= bound) {
                out.push(name);
            }
        }
        out
    }
}

/// How a feature transforms under the orthogonal map `r`. The vector seed
/// `skew(r̂)` is a pseudotensor, so under improper `r` the antisymmetric
/// part picks up a sign, which amounts to transposing.
pub fn transform_feature(x: &Mat3, r: &Mat3) -> Mat3 {
    if r.determinant() > 0.0 {
        x.conjugate(r)
    } else {
        x.transpose().conjugate(r)
    }
}

/// Random systems of 5–15 atoms under random orthogonal maps (alternating
/// proper and improper), translations and permutations.
pub fn equivariance_suite(model: &Model, trials: usize, seed: u64) -> Result<EquivarianceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = EquivarianceReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let n = rng.random_range(5..=15);
        let s = random_probe(model, &mut rng, n);
        let proper = random_orthogonal(rng.random(), false);
        let r = if trial % 2 == 0 {
            rep.rotations += 1;
            proper
        } else {
            rep.reflections += 1;
            -proper
        };

        let feats = model.features(&s)?;
        let base = model.predict_one(&s)?;
        let rs = s.rotated(&r);
        let rfeats = model.features(&rs)?;
        for (x, rx) in feats.iter().flatten().flatten().zip(rfeats.iter().flatten().flatten()) {
            rep.feature_dev = rep.feature_dev.max(transform_feature(x, &r).max_abs_diff(rx));
            if trial % 2 == 1 {
                rep.literal_reflection_dev = rep.literal_reflection_dev.max(x.conjugate(&r).max_abs_diff(rx));
            }
        }
        let p = model.predict_one(&rs)?;
        let e_scale = base.energy.abs();
        let f_scale = max_abs(&base.forces);
        rep.energy_rel_dev = rep.energy_rel_dev.max(rel((p.energy - base.energy).abs(), e_scale));
        let rotated: Vec<[f64; 3]> = base.forces.iter().map(|&f| r.apply(f)).collect();
        rep.force_rel_dev = rep.force_rel_dev.max(rel(max_diff(&rotated, &p.forces), f_scale));

        let shift = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let p = model.predict_one(&s.translated(shift))?;
        rep.translation_energy_rel_dev = rep
            .translation_energy_rel_dev
            .max(rel((p.energy - base.energy).abs(), e_scale));
        rep.translation_force_rel_dev = rep
            .translation_force_rel_dev
            .max(rel(max_diff(&base.forces, &p.forces), f_scale));

        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let p = model.predict_one(&s.permuted(&order))?;
        let reordered: Vec<[f64; 3]> = order.iter().map(|&i| base.forces[i]).collect();
        rep.permutation_energy_rel_dev = rep
            .permutation_energy_rel_dev
            .max(rel((p.energy - base.energy).abs(), e_scale));
        rep.permutation_force_rel_dev = rep
            .permutation_force_rel_dev
            .max(rel(max_diff(&reordered, &p.forces), f_scale));
    }
    Ok(rep)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ForceCheckReport {
    pub systems: usize,
    /// Largest per-system `max |F − F_fd| / max |F_fd|`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest component of Σ_i F_i, eV/Å.
    pub max_net_force: f64,
}

/// Analytic forces against central differences of the energy with step
/// `h` on `systems` random systems of 5–15 atoms.
pub fn force_check(model: &Model, systems: usize, h: f64, seed: u64) -> Result<ForceCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ForceCheckReport {
        systems,
        ..Default::default()
    };
    for _ in 0..systems {
        let n = rng.random_range(5..=15);
        let s = random_probe(model, &mut rng, n);
        let p = model.predict_one(&s)?;
        let mut fd = vec![[0.0; 3]; n];
        for i in 0..n {
            for k in 0..3 {
                let mut plus = s.clone();
                plus.positions[i][k] += h;
                let mut minus = s.clone();
                minus.positions[i][k] -= h;
                fd[i][k] = -(model.energy(&plus)? - model.energy(&minus)?) / (2.0 * h);
            }
        }
        let err = max_diff(&p.forces, &fd);
        rep.max_abs_error = rep.max_abs_error.max(err);
        rep.max_rel_error = rep.max_rel_error.max(rel(err, max_abs(&fd)));
        for k in 0..3 {
            let net: f64 = p.forces.iter().map(|f| f[k]).sum();
            rep.max_net_force = rep.max_net_force.max(net.abs());
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub atoms: usize,
    pub edges: usize,
    /// Seconds per energy + forces evaluation.
    pub mean: f64,
    /// `None` for a single repeat.
    pub std: Option<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `median(2N) / median(N)` for every N whose double is also listed.
    pub doubling_ratios: Vec<(usize, f64)>,
}

impl ScalingReport {
    pub fn median_doubling_ratio(&self) -> Option<f64> {
        median(&self.doubling_ratios.iter().map(|r| r.1).collect::<Vec<_>>())
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Times energy + forces on random systems at fixed density.
pub fn scaling_benchmark(model: &Model, sizes: &[usize], repeats: usize, seed: u64) -> Result<ScalingReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("benchmark sizes must be at least 2, got {n}")));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);
        let s = random_probe(model, &mut rng, n);
        let edges = model.prepare(&[&s])?.dst.len();
        // warm-up
        model.predict_one(&s)?;
        let times: Vec<f64> = (0..repeats)
            .map(|_| {
                let t = Instant::now();
                model.predict_one(&s).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        let mean = times.iter().sum::<f64>() / repeats as f64;
        let std = (repeats > 1).then(|| {
            (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
        });
        rows.push(ScalingRow {
            atoms: n,
            edges,
            mean,
            std,
            median: median(&times).expect("at least one repeat"),
        });
    }
    let mut doubling_ratios = Vec::new();
    for a in &rows {
        if let Some(b) = rows.iter().find(|b| b.atoms == 2 * a.atoms) {
            doubling_ratios.push((a.atoms, b.median / a.median));
        }
    }
    Ok(ScalingReport { rows, doubling_ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Sabotage};

    fn model(mode: AttributeMode) -> Model {
        Model::new(
            ModelConfig {
                num_channels: 4,
                num_rbf: 6,
                attribute_mode: mode,
                elements: vec![1, 6, 8],
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn suite_passes_for_an_intact_model() {
        let rep = equivariance_suite(&model(AttributeMode::TotalCharge), 4, 1).unwrap();
        assert_eq!((rep.rotations, rep.reflections), (2, 2));
        assert!(rep.violations(&EquivarianceTolerances::default()).is_empty(), "{rep:?}");
        assert!(rep.literal_reflection_dev > 1e-6);
    }

    #[test]
    fn suite_catches_a_flipped_skew_seed() {
        let mut m = model(AttributeMode::None);
        m.sabotage = Some(Sabotage::FlipSkewZ);
        let rep = equivariance_suite(&m, 4, 1).unwrap();
        assert!(rep.violations(&EquivarianceTolerances::default()).contains(&"features"));
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let rep = equivariance_suite(&model(AttributeMode::None), 0, 1).unwrap();
        assert!(rep.violations(&EquivarianceTolerances::default()).is_empty());
    }

    #[test]
    fn force_check_is_tight() {
        let rep = force_check(&model(AttributeMode::PerAtomCharge), 2, 1e-4, 5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        assert!(rep.max_net_force < 1e-10);
    }

    #[test]
    fn benchmark_shapes() {
        let rep = scaling_benchmark(&model(AttributeMode::None), &[8, 16, 16], 1, 1).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.std.is_none()));
        assert_eq!(rep.doubling_ratios.len(), 1);
        assert!(scaling_benchmark(&model(AttributeMode::None), &[1], 1, 1).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
