//! Analytic label oracle: Lennard-Jones plus soft Coulomb with
//! charge-dependent atomic charges.
//!
//! `E = Σ_{i<j} 4ε[(σ_ij/r)¹² − (σ_ij/r)⁶] + k_e Σ_{i<j} q_i q_j / √(r² + γ²)`
//! with `q_i = χ(Z_i) + Q/N` and `σ_ij = (σ_i + σ_j)/2`. Triplet states get
//! an extra `J Σ_{i<j} exp(−r/ℓ)`.

use serde::{Deserialize, Serialize};

use super::system::AtomicSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// eV
    pub epsilon: f64,
    /// eV·Å
    pub coulomb_k: f64,
    /// Å
    pub gamma: f64,
    /// eV, prefactor of the triplet term
    pub triplet_coupling: f64,
    /// Å
    pub triplet_range: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            epsilon: 0.1,
            coulomb_k: 14.4,
            gamma: 1.0,
            triplet_coupling: 5.0,
            triplet_range: 2.0,
        }
    }
}

/// Per-element Lennard-Jones size, Å.
pub fn lj_sigma(z: u8) -> f64 {
    match z {
        1 => 1.8,
        6 => 2.4,
        7 => 2.3,
        8 => 2.2,
        47 => 2.6,
        _ => 2.2,
    }
}

/// Per-element charge offset χ, elementary charges. Water, ammonia and
/// methane come out exactly neutral.
pub fn electronegativity_charge(z: u8) -> f64 {
    match z {
        1 => 0.3,
        6 => -1.2,
        7 => -0.9,
        8 => -0.6,
        47 => -0.5,
        _ => 0.0,
    }
}

pub fn atomic_charges(system: &AtomicSystem) -> Vec<f64> {
    let shift = system.total_charge / system.len() as f64;
    system
        .atomic_numbers
        .iter()
        .map(|&z| electronegativity_charge(z) + shift)
        .collect()
}

/// Energy (eV) and exact analytic forces (eV/Å).
pub fn oracle_energy_forces(system: &AtomicSystem, params: &OracleParams) -> (f64, Vec<[f64; 3]>) {
    let n = system.len();
    let q = atomic_charges(system);
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (pi, pj) = (system.positions[i], system.positions[j]);
            let r = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
            let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
            let d = r2.sqrt();

            let sigma = 0.5 * (lj_sigma(system.atomic_numbers[i]) + lj_sigma(system.atomic_numbers[j]));
            let s6 = (sigma * sigma / r2).powi(3);
            let s12 = s6 * s6;
            energy += 4.0 * params.epsilon * (s12 - s6);
            // dE/dr · 1/r
            let mut de_dr_over_r = -24.0 * params.epsilon * (2.0 * s12 - s6) / r2;

            let soft2 = r2 + params.gamma * params.gamma;
            let soft = soft2.sqrt();
            let kqq = params.coulomb_k * q[i] * q[j];
            energy += kqq / soft;
            de_dr_over_r -= kqq / (soft2 * soft);

            if system.spin == 1 {
                let t = params.triplet_coupling * (-d / params.triplet_range).exp();
                energy += t;
                de_dr_over_r -= t / (params.triplet_range * d);
            }

            // r points from i to j; F_j = −dE/dr · r̂, F_i = +dE/dr · r̂
            for k in 0..3 {
                let f = de_dr_over_r * r[k];
                forces[i][k] += f;
                forces[j][k] -= f;
            }
        }
    }
    (energy, forces)
}

pub fn max_force_norm(forces: &[[f64; 3]]) -> f64 {
    forces
        .iter()
        .map(|f| (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt())
        .fold(0.0, f64::max)
}

/// Fills the energy and force labels from the oracle.
pub fn label(system: &mut AtomicSystem, params: &OracleParams) {
    let (e, f) = oracle_energy_forces(system, params);
    system.energy = Some(e);
    system.forces = Some(f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_orthogonal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lj_minimum_has_zero_force() {
        // Q = 1 cancels χ(Ag) = −0.5 on both atoms
        let r = 2f64.powf(1.0 / 6.0) * lj_sigma(47);
        let s = AtomicSystem::new(vec![47, 47], vec![[0.0; 3], [r, 0.0, 0.0]]).with_charge(1.0);
        let (e, f) = oracle_energy_forces(&s, &OracleParams::default());
        assert!((e + 0.1).abs() < 1e-14);
        assert!(max_force_norm(&f) < 1e-13);
    }

    #[test]
    fn soft_coulomb_arithmetic() {
        // χ(Ag) = −0.5, so Q = 1.2 leaves q = 0.1 on each atom
        let s = AtomicSystem::new(vec![47, 47], vec![[0.0; 3], [1.0, 0.0, 0.0]]).with_charge(1.2);
        let params = OracleParams {
            epsilon: 0.0,
            coulomb_k: 1.0,
            gamma: 1.0,
            ..OracleParams::default()
        };
        let (e, _) = oracle_energy_forces(&s, &params);
        assert!((e - 0.01 / 2f64.sqrt()).abs() < 1e-15);
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize) -> AtomicSystem {
        let zs = [1u8, 6, 7, 8];
        AtomicSystem::new(
            (0..n).map(|_| zs[rng.random_range(0..4)]).collect(),
            (0..n)
                .map(|i| [i as f64 * 1.7 + rng.random::<f64>(), 2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>()])
                .collect(),
        )
        .with_charge(-1.0)
        .with_spin(1)
    }

    #[test]
    fn forces_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = OracleParams::default();
        for _ in 0..10 {
            let s = random_system(&mut rng, 5);
            let (_, f) = oracle_energy_forces(&s, &params);
            let h = 1e-6;
            let mut worst = 0.0f64;
            let scale = max_force_norm(&f);
            for i in 0..s.len() {
                for k in 0..3 {
                    let mut p = s.clone();
                    p.positions[i][k] += h;
                    let mut m = s.clone();
                    m.positions[i][k] -= h;
                    let num = -(oracle_energy_forces(&p, &params).0 - oracle_energy_forces(&m, &params).0) / (2.0 * h);
                    worst = worst.max((num - f[i][k]).abs() / scale);
                }
            }
            assert!(worst <= 1e-7, "relative error {worst}");
        }
    }

    #[test]
    fn energy_invariant_and_forces_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = OracleParams::default();
        let s = random_system(&mut rng, 6);
        let (e, f) = oracle_energy_forces(&s, &params);
        let net: [f64; 3] = std::array::from_fn(|k| f.iter().map(|v| v[k]).sum());
        assert!(net.iter().all(|v| v.abs() < 1e-12));

        let r = random_orthogonal(4, true);
        let (er, fr) = oracle_energy_forces(&s.rotated(&r).translated([1.0, -2.0, 3.0]), &params);
        assert!((er - e).abs() < 1e-12 * e.abs().max(1.0));
        for (a, b) in fr.iter().zip(&f) {
            let rb = r.apply(*b);
            assert!((0..3).all(|k| (a[k] - rb[k]).abs() < 1e-11));
        }

        let order = [3, 1, 5, 0, 2, 4];
        let (ep, fp) = oracle_energy_forces(&s.permuted(&order), &params);
        assert!((ep - e).abs() < 1e-12 * e.abs().max(1.0));
        for (k, &i) in order.iter().enumerate() {
            assert!((0..3).all(|c| (fp[k][c] - f[i][c]).abs() < 1e-12));
        }
    }
}
