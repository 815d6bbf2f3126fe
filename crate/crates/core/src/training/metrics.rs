//! Error metrics in meV, overall and per attribute group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::AtomicSystem;
use crate::error::{Error, Result};
use crate::model::Prediction;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub systems: usize,
    /// meV
    pub energy_mae: f64,
    /// meV
    pub energy_rmse: f64,
    /// meV/atom
    pub energy_mae_per_atom: f64,
    /// meV/atom
    pub energy_rmse_per_atom: f64,
    /// meV/Å over Cartesian components; NaN without force labels.
    pub force_mae: f64,
    /// meV/Å over Cartesian components; NaN without force labels.
    pub force_rmse: f64,
    /// meV/Å over per-atom error vector norms; NaN without force labels.
    pub force_vector_mae: f64,
}

/// Attribute used to split metrics into groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    TotalCharge,
    Spin,
}

impl GroupBy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "total_charge" | "charge" | "Q" => Ok(GroupBy::TotalCharge),
            "spin" | "S" => Ok(GroupBy::Spin),
            _ => Err(Error::Config(format!("group_by must be total_charge or spin, got `{s}`"))),
        }
    }

    pub fn label(self, s: &AtomicSystem) -> String {
        match self {
            GroupBy::TotalCharge => format!("Q={}", s.total_charge),
            GroupBy::Spin => format!("S={}", s.spin),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    pub groups: BTreeMap<String, Metrics>,
}

pub fn metrics(predictions: &[Prediction], systems: &[&AtomicSystem]) -> Result<Metrics> {
    if predictions.len() != systems.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![predictions.len()],
            rhs: vec![systems.len()],
        });
    }
    let n = systems.len().max(1) as f64;
    let (mut ae, mut se, mut ae_atom, mut se_atom) = (0.0, 0.0, 0.0, 0.0);
    let (mut af, mut sf, mut av, mut nf, mut na) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let mut all_forces = true;
    for (p, s) in predictions.iter().zip(systems) {
        let e = (p.energy - s.energy.ok_or(Error::MissingLabels("energy"))?) * 1e3;
        ae += e.abs();
        se += e * e;
        let per_atom = e / s.len() as f64;
        ae_atom += per_atom.abs();
        se_atom += per_atom * per_atom;
        match &s.forces {
            Some(f) => {
                for (pf, lf) in p.forces.iter().zip(f) {
                    let d: [f64; 3] = std::array::from_fn(|k| (pf[k] - lf[k]) * 1e3);
                    for v in d {
                        af += v.abs();
                        sf += v * v;
                    }
                    av += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    nf += 3;
                    na += 1;
                }
            }
            None => all_forces = false,
        }
    }
    let force = |v: f64, count: usize| if all_forces && count > 0 { v / count as f64 } else { f64::NAN };
    Ok(Metrics {
        systems: systems.len(),
        energy_mae: ae / n,
        energy_rmse: (se / n).sqrt(),
        energy_mae_per_atom: ae_atom / n,
        energy_rmse_per_atom: (se_atom / n).sqrt(),
        force_mae: force(af, nf),
        force_rmse: force(sf, nf).sqrt(),
        force_vector_mae: force(av, na),
    })
}

pub fn evaluate_predictions(
    predictions: &[Prediction],
    systems: &[&AtomicSystem],
    group_by: Option<GroupBy>,
) -> Result<Evaluation> {
    let overall = metrics(predictions, systems)?;
    let mut groups = BTreeMap::new();
    if let Some(key) = group_by {
        let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in systems.iter().enumerate() {
            members.entry(key.label(s)).or_default().push(i);
        }
        for (label, idx) in members {
            let p: Vec<Prediction> = idx.iter().map(|&i| predictions[i].clone()).collect();
            let s: Vec<&AtomicSystem> = idx.iter().map(|&i| systems[i]).collect();
            groups.insert(label, metrics(&p, &s)?);
        }
    }
    Ok(Evaluation { overall, groups })
}
