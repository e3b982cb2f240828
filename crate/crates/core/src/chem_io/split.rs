use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles `ids` with a seeded generator and slices it into train / valid /
/// test. Valid and test sizes are `floor(n * ratio)`; the remainder goes to
/// train.
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative: {ratios:?}")));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1: {ratios:?}")));
    }
    let nonzero = [rt, rv, rs].iter().filter(|r| **r > 0.0).count();
    if ids.len() < nonzero.max(1) {
        return Err(Error::Dataset(format!(
            "cannot split {} ids into {nonzero} non-empty sets",
            ids.len()
        )));
    }
    let n = ids.len() as f64;
    // ratios are only pinned to 1e-9, so absorb representation error before flooring
    let size = |r: f64| (n * r + 1e-6).floor() as usize;
    let n_valid = size(rv);
    let n_test = size(rs);
    let n_train = ids.len() - n_valid - n_test;

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        valid,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn ten_ids() {
        let s = split_dataset(&ids(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_dataset(&ids(10), (0.8, 0.1, 0.1), 7).unwrap());
        assert_ne!(s.train, split_dataset(&ids(10), (0.8, 0.1, 0.1), 8).unwrap().train);
    }

    #[test]
    fn qm9_sized_split() {
        let n = 110_000 + 10_000 + 10_831;
        let nf = n as f64;
        let s = split_dataset(&ids(n), (110_000.0 / nf, 10_000.0 / nf, 10_831.0 / nf), 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (110_000, 10_000, 10_831));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(split_dataset(&ids(2), (0.5, 0.25, 0.25), 0).is_err());
        assert!(split_dataset(&ids(10), (0.5, 0.2, 0.2), 0).is_err());
        assert!(split_dataset(&ids(10), (1.2, -0.1, -0.1), 0).is_err());
        assert!(split_dataset(&ids(1), (1.0, 0.0, 0.0), 0).is_ok());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..300, seed in any::<u64>(), a in 1u32..10, b in 1u32..10, c in 1u32..10) {
            let t = (a + b + c) as f64;
            let all = ids(n);
            let s = split_dataset(&all, (a as f64 / t, b as f64 / t, c as f64 / t), seed).unwrap();
            let mut seen = HashSet::new();
            for id in s.train.iter().chain(&s.valid).chain(&s.test) {
                prop_assert!(seen.insert(id.clone()));
            }
            prop_assert_eq!(seen.len(), n);
        }
    }
}
