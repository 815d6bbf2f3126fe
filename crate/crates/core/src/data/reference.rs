//! Per-element reference energies by linear least squares.

use std::collections::{BTreeMap, BTreeSet};

use super::system::AtomicSystem;
use crate::error::{Error, Result};

/// Fits `E ≈ Σ_Z count_Z · e_Z` over `systems`.
///
/// The normal equations are reduced with Gauss–Jordan elimination and
/// partial pivoting; a pivot below `1e-10` of the largest diagonal entry
/// marks the design as rank deficient.
pub fn fit_reference_energies(systems: &[AtomicSystem]) -> Result<BTreeMap<u8, f64>> {
    let elements: Vec<u8> = systems
        .iter()
        .flat_map(|s| s.atomic_numbers.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = elements.len();
    if k == 0 {
        return Err(Error::MissingLabels("reference fit needs at least one system"));
    }
    let column: BTreeMap<u8, usize> = elements.iter().enumerate().map(|(i, &z)| (z, i)).collect();

    // augmented [AᵀA | Aᵀb]
    let mut m = vec![vec![0.0; k + 1]; k];
    for s in systems {
        let e = s.energy.ok_or(Error::MissingLabels("energy"))?;
        let mut counts = vec![0.0; k];
        for z in &s.atomic_numbers {
            counts[column[z]] += 1.0;
        }
        for r in 0..k {
            for c in 0..k {
                m[r][c] += counts[r] * counts[c];
            }
            m[r][k] += counts[r] * e;
        }
    }

    let scale = (0..k).map(|i| m[i][i]).fold(0.0, f64::max);
    let tol = 1e-10 * scale;
    let mut pivot_of_col = vec![None; k];
    let mut row = 0;
    for col in 0..k {
        let best = (row..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(best) = best.filter(|&b| m[b][col].abs() > tol) else {
            continue;
        };
        m.swap(row, best);
        let p = m[row][col];
        for v in m[row].iter_mut() {
            *v /= p;
        }
        for r in 0..k {
            if r != row && m[r][col] != 0.0 {
                let f = m[r][col];
                for c in 0..=k {
                    m[r][c] -= f * m[row][c];
                }
            }
        }
        pivot_of_col[col] = Some(row);
        row += 1;
    }

    if row < k {
        // each free column spans a null vector with its dependent pivots
        let mut confounded = BTreeSet::new();
        for (free, p) in pivot_of_col.iter().enumerate() {
            if p.is_some() {
                continue;
            }
            confounded.insert(elements[free]);
            for (col, p) in pivot_of_col.iter().enumerate() {
                if let Some(r) = p {
                    if m[*r][free].abs() > 1e-12 {
                        confounded.insert(elements[col]);
                    }
                }
            }
        }
        return Err(Error::RankDeficient(confounded.into_iter().collect()));
    }

    Ok(elements
        .iter()
        .enumerate()
        .map(|(col, &z)| (z, m[pivot_of_col[col].unwrap()][k]))
        .collect())
}

/// Sum of reference energies over the atoms of `system`.
pub fn reference_sum(system: &AtomicSystem, reference: &BTreeMap<u8, f64>) -> Result<f64> {
    system
        .atomic_numbers
        .iter()
        .map(|z| reference.get(z).copied().ok_or(Error::UnknownElement(*z)))
        .sum()
}
