//! Synthetic degeneracy datasets labelled by the analytic oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{label, max_force_norm, oracle_energy_forces, OracleParams};
use super::system::AtomicSystem;
use crate::error::{Error, Result};

/// Stopping rule for [`minimize`].
pub const MINIMIZE_TOLERANCE: f64 = 1e-3;
pub const MINIMIZE_MAX_ITERATIONS: usize = 10_000;

/// Steepest descent with a backtracking (Armijo) line search.
pub fn minimize(system: &AtomicSystem, params: &OracleParams) -> Result<AtomicSystem> {
    let mut current = system.clone();
    let (mut energy, mut forces) = oracle_energy_forces(&current, params);
    let mut step = 1e-2;
    for _ in 0..MINIMIZE_MAX_ITERATIONS {
        if max_force_norm(&forces) < MINIMIZE_TOLERANCE {
            current.energy = None;
            current.forces = None;
            return Ok(current);
        }
        let f2: f64 = forces.iter().flatten().map(|v| v * v).sum();
        loop {
            let mut trial = current.clone();
            for (p, f) in trial.positions.iter_mut().zip(&forces) {
                for k in 0..3 {
                    p[k] += step * f[k];
                }
            }
            let (e, f) = oracle_energy_forces(&trial, params);
            if e <= energy - 0.5 * step * f2 {
                current = trial;
                energy = e;
                forces = f;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                return Err(Error::NoConvergence {
                    iterations: MINIMIZE_MAX_ITERATIONS,
                    max_force: max_force_norm(&forces),
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: MINIMIZE_MAX_ITERATIONS,
        max_force: max_force_norm(&forces),
    })
}

/// Starting geometries (Å) for the molecule pairs, in the order they are used.
pub fn molecule_templates() -> Vec<(&'static str, AtomicSystem)> {
    let t = 2.2 / 3f64.sqrt();
    vec![
        (
            "H2O",
            AtomicSystem::new(vec![8, 1, 1], vec![[0.0; 3], [2.2, 0.0, 0.0], [-0.8, 2.1, 0.0]]),
        ),
        (
            "CH4",
            AtomicSystem::new(
                vec![6, 1, 1, 1, 1],
                vec![[0.0; 3], [t, t, t], [t, -t, -t], [-t, t, -t], [-t, -t, t]],
            ),
        ),
        (
            "H2O2",
            AtomicSystem::new(
                vec![8, 8, 1, 1],
                vec![[0.0; 3], [2.4, 0.0, 0.0], [-0.7, 2.1, 0.3], [3.1, -0.3, 2.1]],
            ),
        ),
        (
            "NH3",
            AtomicSystem::new(
                vec![7, 1, 1, 1],
                vec![[0.0; 3], [2.1, 0.0, -0.7], [-1.05, 1.82, -0.7], [-1.05, -1.82, -0.7]],
            ),
        ),
        (
            "NH2OH",
            AtomicSystem::new(
                vec![7, 8, 1, 1, 1],
                vec![[0.0; 3], [2.3, 0.0, 0.0], [-0.8, 2.0, 0.0], [-0.8, -1.0, 1.7], [3.0, 2.0, 0.3]],
            ),
        ),
    ]
}

/// One labelled state of a geometry: total charge and spin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub total_charge: f64,
    pub spin: u8,
}

/// Draws `frames` Gaussian displacements of `minimum` and labels every
/// displaced geometry in each of `states`. A draw is discarded and redrawn
/// when any state has a force of `max_force` or more, or atoms coincide.
///
/// Returns one list per state; entry `k` of every list shares a geometry.
pub fn sample_conformers(
    minimum: &AtomicSystem,
    states: &[State],
    frames: usize,
    sigma: f64,
    max_force: f64,
    params: &OracleParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<AtomicSystem>>> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out: Vec<Vec<AtomicSystem>> = vec![Vec::with_capacity(frames); states.len()];
    let max_attempts = 100 * frames.max(1);
    let mut attempts = 0;
    while out[0].len() < frames {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "force filter rejected {attempts} displacement draws; lower the displacement or raise the force limit"
            )));
        }
        let mut geometry = minimum.clone();
        for p in &mut geometry.positions {
            for v in p.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        if geometry.validate().is_err() {
            continue;
        }
        let labelled: Vec<AtomicSystem> = states
            .iter()
            .map(|s| {
                let mut sys = geometry.clone().with_charge(s.total_charge).with_spin(s.spin);
                label(&mut sys, params);
                sys
            })
            .collect();
        if labelled
            .iter()
            .all(|s| max_force_norm(s.forces.as_deref().unwrap_or_default()) < max_force)
        {
            for (list, sys) in out.iter_mut().zip(labelled) {
                list.push(sys);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub pairs: usize,
    pub frames: usize,
    /// Total charge of dataset A′ and of dataset B′.
    pub charges: [f64; 2],
    /// Å, per Cartesian coordinate.
    pub displacement: f64,
    /// eV/Å
    pub max_force: f64,
    pub seed: u64,
    pub oracle: OracleParams,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            pairs: 3,
            frames: 500,
            charges: [0.0, -1.0],
            displacement: 0.2,
            max_force: 100.0,
            seed: 1,
            oracle: OracleParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDatasets {
    /// Every pair at the first charge.
    pub a: Vec<AtomicSystem>,
    /// Every pair at the second charge, frame-aligned with `a`.
    pub b: Vec<AtomicSystem>,
    /// Minimized geometry of each pair; conformers are displacements of these.
    pub minima: Vec<AtomicSystem>,
}

impl ToyDatasets {
    pub fn merged(&self) -> Vec<AtomicSystem> {
        self.a.iter().chain(&self.b).cloned().collect()
    }
}

/// Builds datasets A′ and B′: `pairs` molecules, each minimized at neutral
/// charge and then displaced `frames` times, labelled at both charges.
pub fn generate_toy_datasets(config: &ToyConfig) -> Result<ToyDatasets> {
    let templates = molecule_templates();
    if config.pairs == 0 || config.pairs > templates.len() {
        return Err(Error::Config(format!(
            "pairs must be between 1 and {}, got {}",
            templates.len(),
            config.pairs
        )));
    }
    let states = config.charges.map(|q| State {
        total_charge: q,
        spin: 0,
    });
    let per_pair: Vec<(AtomicSystem, Vec<Vec<AtomicSystem>>)> = templates[..config.pairs]
        .par_iter()
        .enumerate()
        .map(|(p, (_, template))| {
            let minimum = minimize(template, &config.oracle)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(p as u64);
            let sets = sample_conformers(
                &minimum,
                &states,
                config.frames,
                config.displacement,
                config.max_force,
                &config.oracle,
                &mut rng,
            )?;
            Ok((minimum, sets))
        })
        .collect::<Result<_>>()?;

    let mut out = ToyDatasets {
        a: Vec::new(),
        b: Vec::new(),
        minima: Vec::new(),
    };
    for (minimum, mut sets) in per_pair {
        out.minima.push(minimum);
        out.b.append(&mut sets[1]);
        out.a.append(&mut sets[0]);
    }
    Ok(out)
}

/// A homonuclear cluster observed in several electronic states at shared
/// geometries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub element: u8,
    pub atoms: usize,
    pub states: Vec<State>,
    pub frames: usize,
    pub displacement: f64,
    pub max_force: f64,
    pub seed: u64,
    pub oracle: OracleParams,
}

impl ClusterConfig {
    /// Ag₃ at Q = ±1.
    pub fn charge_flip() -> Self {
        ClusterConfig {
            element: 47,
            atoms: 3,
            states: vec![
                State {
                    total_charge: 1.0,
                    spin: 0,
                },
                State {
                    total_charge: -1.0,
                    spin: 0,
                },
            ],
            frames: 200,
            displacement: 0.1,
            max_force: 100.0,
            seed: 1,
            oracle: OracleParams::default(),
        }
    }

    /// Ag₃ at Q = 0 as singlet and triplet.
    pub fn spin_pair() -> Self {
        let mut c = Self::charge_flip();
        c.states = vec![
            State {
                total_charge: 0.0,
                spin: 0,
            },
            State {
                total_charge: 0.0,
                spin: 1,
            },
        ];
        c
    }
}

/// Frames are ordered geometry-major: all states of geometry 0, then
/// geometry 1, and so on. The cluster is minimized at the total charge that
/// makes every atomic charge zero, so the reference geometry is the pure
/// Lennard-Jones minimum of an equilateral ring.
pub fn generate_cluster_dataset(config: &ClusterConfig) -> Result<Vec<AtomicSystem>> {
    if config.atoms < 2 || config.states.is_empty() {
        return Err(Error::Config("cluster needs at least 2 atoms and 1 state".into()));
    }
    let r = 2f64.powf(1.0 / 6.0) * super::oracle::lj_sigma(config.element);
    let ring = r / (2.0 * (std::f64::consts::PI / config.atoms as f64).sin());
    let positions = (0..config.atoms)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / config.atoms as f64;
            [ring * a.cos(), ring * a.sin(), 0.0]
        })
        .collect();
    let neutral = -super::oracle::electronegativity_charge(config.element) * config.atoms as f64;
    let start = AtomicSystem::new(vec![config.element; config.atoms], positions).with_charge(neutral);
    let mut minimum = minimize(&start, &config.oracle)?;
    minimum.total_charge = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sets = sample_conformers(
        &minimum,
        &config.states,
        config.frames,
        config.displacement,
        config.max_force,
        &config.oracle,
        &mut rng,
    )?;
    let mut out = Vec::with_capacity(config.frames * sets.len());
    for k in 0..config.frames {
        for set in &sets {
            out.push(set[k].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            frames: 40,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn minima_are_converged() {
        let params = OracleParams::default();
        for (name, t) in molecule_templates() {
            let m = minimize(&t, &params).unwrap_or_else(|e| panic!("{name}: {e}"));
            let (_, f) = oracle_energy_forces(&m, &params);
            assert!(max_force_norm(&f) < MINIMIZE_TOLERANCE, "{name}");
        }
    }

    #[test]
    fn pairs_share_geometry_and_differ_in_label() {
        let d = generate_toy_datasets(&small()).unwrap();
        assert_eq!(d.a.len(), 120);
        assert_eq!(d.b.len(), 120);
        for (a, b) in d.a.iter().zip(&d.b) {
            assert_eq!(a.positions, b.positions);
            assert_eq!(a.atomic_numbers, b.atomic_numbers);
            assert_eq!((a.total_charge, b.total_charge), (0.0, -1.0));
            assert!((a.energy.unwrap() - b.energy.unwrap()).abs() > 0.1);
            for s in [a, b] {
                assert!(max_force_norm(s.forces.as_ref().unwrap()) < 100.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = small();
        assert_eq!(generate_toy_datasets(&c).unwrap(), generate_toy_datasets(&c).unwrap());
        let other = ToyConfig { seed: 2, ..c.clone() };
        assert_ne!(generate_toy_datasets(&c).unwrap().a, generate_toy_datasets(&other).unwrap().a);
    }

    #[test]
    fn too_many_pairs_is_rejected() {
        let c = ToyConfig {
            pairs: 6,
            ..small()
        };
        assert!(generate_toy_datasets(&c).is_err());
    }

    #[test]
    fn cluster_states_share_geometry() {
        for config in [ClusterConfig::charge_flip(), ClusterConfig::spin_pair()] {
            let c = ClusterConfig { frames: 20, ..config };
            let frames = generate_cluster_dataset(&c).unwrap();
            assert_eq!(frames.len(), 40);
            for pair in frames.chunks(2) {
                assert_eq!(pair[0].positions, pair[1].positions);
                assert!((pair[0].energy.unwrap() - pair[1].energy.unwrap()).abs() > 1.0);
            }
        }
    }
}
