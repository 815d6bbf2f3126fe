use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms closer than this are treated as coincident.
pub const MIN_PAIR_DISTANCE: f64 = 1e-6;

/// One molecular configuration with its global and per-atom attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicSystem {
    pub atomic_numbers: Vec<u8>,
    /// Å
    pub positions: Vec<[f64; 3]>,
    /// Total charge in elementary charges.
    pub total_charge: f64,
    /// 0 singlet, 1 triplet.
    pub spin: u8,
    pub per_atom_charges: Option<Vec<f64>>,
    /// eV
    pub energy: Option<f64>,
    /// eV/Å
    pub forces: Option<Vec<[f64; 3]>>,
}

impl AtomicSystem {
    pub fn new(atomic_numbers: Vec<u8>, positions: Vec<[f64; 3]>) -> Self {
        AtomicSystem {
            atomic_numbers,
            positions,
            total_charge: 0.0,
            spin: 0,
            per_atom_charges: None,
            energy: None,
            forces: None,
        }
    }

    pub fn with_charge(mut self, total_charge: f64) -> Self {
        self.total_charge = total_charge;
        self
    }

    pub fn with_spin(mut self, spin: u8) -> Self {
        self.spin = spin;
        self
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    /// Checks every structural invariant, including the O(N²) coincidence test.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidSystem("system has no atoms".into()));
        }
        if self.positions.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{} atomic numbers but {} positions",
                n,
                self.positions.len()
            )));
        }
        if self.atomic_numbers.contains(&0) {
            return Err(Error::InvalidSystem("atomic number 0".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSystem("non-finite position".into()));
        }
        if !self.total_charge.is_finite() {
            return Err(Error::InvalidSystem("non-finite total charge".into()));
        }
        if self.spin > 1 {
            return Err(Error::InvalidSystem(format!("spin must be 0 or 1, got {}", self.spin)));
        }
        if let Some(q) = &self.per_atom_charges {
            if q.len() != n {
                return Err(Error::InvalidSystem(format!(
                    "{} per-atom charges for {} atoms",
                    q.len(),
                    n
                )));
            }
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSystem("non-finite per-atom charge".into()));
            }
        }
        if let Some(f) = &self.forces {
            if f.len() != n {
                return Err(Error::InvalidSystem(format!("{} force rows for {} atoms", f.len(), n)));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if distance(self.positions[i], self.positions[j]) <= MIN_PAIR_DISTANCE {
                    return Err(Error::InvalidSystem(format!("atoms {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Applies `x → R·x` to positions and force labels.
    pub fn rotated(&self, rotation: &crate::tensor::Mat3) -> Self {
        let mut out = self.clone();
        out.positions = self.positions.iter().map(|&p| rotation.apply(p)).collect();
        out.forces = self
            .forces
            .as_ref()
            .map(|f| f.iter().map(|&v| rotation.apply(v)).collect());
        out
    }

    pub fn translated(&self, shift: [f64; 3]) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            for k in 0..3 {
                p[k] += shift[k];
            }
        }
        out
    }

    /// Reorders atoms so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |v: &Vec<[f64; 3]>| order.iter().map(|&i| v[i]).collect();
        AtomicSystem {
            atomic_numbers: order.iter().map(|&i| self.atomic_numbers[i]).collect(),
            positions: pick(&self.positions),
            total_charge: self.total_charge,
            spin: self.spin,
            per_atom_charges: self
                .per_atom_charges
                .as_ref()
                .map(|q| order.iter().map(|&i| q[i]).collect()),
            energy: self.energy,
            forces: self.forces.as_ref().map(pick),
        }
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_systems() {
        let ok = AtomicSystem::new(vec![1, 8], vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        ok.validate().unwrap();

        let coincident = AtomicSystem::new(vec![1, 8], vec![[0.0; 3], [1e-7, 0.0, 0.0]]);
        assert!(coincident.validate().is_err());

        assert!(AtomicSystem::new(vec![], vec![]).validate().is_err());

        let mut bad_q = ok.clone();
        bad_q.per_atom_charges = Some(vec![0.1]);
        assert!(bad_q.validate().is_err());

        let mut nan = ok.clone();
        nan.positions[1][2] = f64::NAN;
        assert!(nan.validate().is_err());

        assert!(ok.clone().with_spin(2).validate().is_err());
    }
}
