use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Patient-level train/validation partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<u64>,
    pub validation_ids: BTreeSet<u64>,
}

pub fn split(dataset: &LongitudinalDataset, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    split_ids(&dataset.ids(), fraction, seed)
}

/// Shuffles the sorted ids with `seed` and keeps `round(fraction * n)` for
/// training (at least one patient on each side).
pub fn split_ids(ids: &[u64], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut sorted: Vec<u64> = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let n = sorted.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cannot split {n} patient(s)")));
    }
    sorted.shuffle(&mut rng::rng(seed));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok(DatasetSplit {
        train_ids: sorted[..n_train].iter().copied().collect(),
        validation_ids: sorted[n_train..].iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fraction() {
        let ids: Vec<u64> = (0..10).collect();
        let s = split_ids(&ids, 0.7, 1).unwrap();
        assert_eq!(s.train_ids.len(), 7);
        assert_eq!(s.validation_ids.len(), 3);
    }

    #[test]
    fn deterministic() {
        let ids: Vec<u64> = (0..50).collect();
        assert_eq!(split_ids(&ids, 0.7, 9).unwrap(), split_ids(&ids, 0.7, 9).unwrap());
        assert_ne!(split_ids(&ids, 0.7, 9).unwrap(), split_ids(&ids, 0.7, 10).unwrap());
    }

    #[test]
    fn disjoint_and_covering() {
        use rand::Rng;
        let mut r = rng::rng(42);
        let ids: Vec<u64> = (0..1000).map(|_| r.random::<u64>()).collect();
        let s = split_ids(&ids, 0.7, 3).unwrap();
        assert!(s.train_ids.is_disjoint(&s.validation_ids));
        let all: BTreeSet<u64> = ids.iter().copied().collect();
        let union: BTreeSet<u64> = s.train_ids.union(&s.validation_ids).copied().collect();
        assert_eq!(all, union);
    }

    #[test]
    fn too_few() {
        assert!(split_ids(&[1], 0.5, 0).is_err());
        assert!(split_ids(&[1, 2], 1.0, 0).is_err());
    }
}
