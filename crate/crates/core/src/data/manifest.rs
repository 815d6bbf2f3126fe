//! Plain key-value manifest recording everything needed to regenerate a
//! toy dataset.

use super::oracle::OracleParams;
use super::toy::ToyConfig;
use crate::error::{Error, Result};
use crate::keyvalue;

const KEYS: &[&str] = &[
    "seed",
    "pairs",
    "frames",
    "charge_a",
    "charge_b",
    "displacement",
    "max_force",
    "oracle_epsilon",
    "oracle_coulomb_k",
    "oracle_gamma",
    "oracle_triplet_coupling",
    "oracle_triplet_range",
    "dataset_a",
    "dataset_b",
    "dataset_merged",
    "frames_a",
    "frames_b",
    "frames_merged",
];

/// File names and frame counts of one generated dataset family.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyManifest {
    pub config: ToyConfig,
    /// (name, relative path, frame count) for A′, B′ and A′∪B′.
    pub datasets: [(String, usize); 3],
}

impl ToyManifest {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let o = &c.oracle;
        let mut e: Vec<(String, String)> = vec![
            ("seed".into(), c.seed.to_string()),
            ("pairs".into(), c.pairs.to_string()),
            ("frames".into(), c.frames.to_string()),
            ("charge_a".into(), c.charges[0].to_string()),
            ("charge_b".into(), c.charges[1].to_string()),
            ("displacement".into(), c.displacement.to_string()),
            ("max_force".into(), c.max_force.to_string()),
            ("oracle_epsilon".into(), o.epsilon.to_string()),
            ("oracle_coulomb_k".into(), o.coulomb_k.to_string()),
            ("oracle_gamma".into(), o.gamma.to_string()),
            ("oracle_triplet_coupling".into(), o.triplet_coupling.to_string()),
            ("oracle_triplet_range".into(), o.triplet_range.to_string()),
        ];
        for (suffix, (path, count)) in ["a", "b", "merged"].iter().zip(&self.datasets) {
            e.push((format!("dataset_{suffix}"), path.clone()));
            e.push((format!("frames_{suffix}"), count.to_string()));
        }
        keyvalue::format(&e)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ToyConfig::default();
        let mut datasets: [(String, usize); 3] = Default::default();
        for (k, v) in keyvalue::parse(text)? {
            let slot = |name: &str| ["a", "b", "merged"].iter().position(|s| *s == name);
            match k.as_str() {
                "seed" => config.seed = keyvalue::parse_value(&k, &v)?,
                "pairs" => config.pairs = keyvalue::parse_value(&k, &v)?,
                "frames" => config.frames = keyvalue::parse_value(&k, &v)?,
                "charge_a" => config.charges[0] = keyvalue::parse_value(&k, &v)?,
                "charge_b" => config.charges[1] = keyvalue::parse_value(&k, &v)?,
                "displacement" => config.displacement = keyvalue::parse_value(&k, &v)?,
                "max_force" => config.max_force = keyvalue::parse_value(&k, &v)?,
                "oracle_epsilon" => config.oracle.epsilon = keyvalue::parse_value(&k, &v)?,
                "oracle_coulomb_k" => config.oracle.coulomb_k = keyvalue::parse_value(&k, &v)?,
                "oracle_gamma" => config.oracle.gamma = keyvalue::parse_value(&k, &v)?,
                "oracle_triplet_coupling" => config.oracle.triplet_coupling = keyvalue::parse_value(&k, &v)?,
                "oracle_triplet_range" => config.oracle.triplet_range = keyvalue::parse_value(&k, &v)?,
                _ => {
                    if let Some(i) = k.strip_prefix("dataset_").and_then(slot) {
                        datasets[i].0 = v;
                    } else if let Some(i) = k.strip_prefix("frames_").and_then(slot) {
                        datasets[i].1 = keyvalue::parse_value(&k, &v)?;
                    } else {
                        return Err(keyvalue::unknown_key(&k, KEYS));
                    }
                }
            }
        }
        if datasets.iter().any(|d| d.0.is_empty()) {
            return Err(Error::Config("manifest is missing a dataset path".into()));
        }
        Ok(ToyManifest { config, datasets })
    }
}

/// Oracle overrides by manifest key, shared with the command line.
pub fn apply_oracle_override(params: &mut OracleParams, key: &str, value: &str) -> Result<()> {
    let slot = match key {
        "epsilon" | "oracle_epsilon" => &mut params.epsilon,
        "coulomb_k" | "oracle_coulomb_k" => &mut params.coulomb_k,
        "gamma" | "oracle_gamma" => &mut params.gamma,
        "triplet_coupling" | "oracle_triplet_coupling" => &mut params.triplet_coupling,
        "triplet_range" | "oracle_triplet_range" => &mut params.triplet_range,
        _ => {
            return Err(keyvalue::unknown_key(
                key,
                &["epsilon", "coulomb_k", "gamma", "triplet_coupling", "triplet_range"],
            ))
        }
    };
    *slot = keyvalue::parse_value(key, value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut m = ToyManifest {
            config: ToyConfig::default(),
            datasets: [("a.xyz".into(), 1500), ("b.xyz".into(), 1500), ("ab.xyz".into(), 3000)],
        };
        m.config.oracle.gamma = 0.75;
        m.config.charges = [0.0, -1.0];
        let text = m.to_text();
        assert_eq!(ToyManifest::parse(&text).unwrap(), m);
        assert!(ToyManifest::parse(&(text + "bogus = 1\n")).is_err());
    }
}
