use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split sizes, either as fractions of the dataset or as absolute counts.
/// The test set takes whatever remains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSizes {
    Fractions { train: f64, val: f64 },
    Counts { train: usize, val: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub fn split(len: usize, sizes: SplitSizes, seed: u64) -> Result<DatasetSplit> {
    let (train, val) = match sizes {
        SplitSizes::Fractions { train, val } => {
            if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "split fractions must be in [0, 1] and sum to at most 1, got {train} and {val}"
                )));
            }
            let t = (train * len as f64).round() as usize;
            let v = ((val * len as f64).round() as usize).min(len - t.min(len));
            (t, v)
        }
        SplitSizes::Counts { train, val } => (train, val),
    };
    if train + val > len {
        return Err(Error::OverAllocated {
            requested: train + val,
            available: len,
        });
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(DatasetSplit {
        train: order[..train].to_vec(),
        val: order[train..train + val].to_vec(),
        test: order[train + val..].to_vec(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_of_ten() {
        let s = split(10, SplitSizes::Fractions { train: 0.5, val: 0.1 }, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 1, 4));
        assert_eq!(s, split(10, SplitSizes::Fractions { train: 0.5, val: 0.1 }, 1).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn over_allocation() {
        assert!(split(10, SplitSizes::Counts { train: 8, val: 3 }, 0).is_err());
        assert!(split(10, SplitSizes::Fractions { train: 0.8, val: 0.3 }, 0).is_err());
        let s = split(10, SplitSizes::Counts { train: 7, val: 3 }, 0).unwrap();
        assert!(s.test.is_empty());
    }
}
