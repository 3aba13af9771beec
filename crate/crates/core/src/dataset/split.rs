use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabelVector;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Positives and negatives are shuffled separately, then dealt round-robin
/// into folds as one sequence (positives first), so fold sizes differ by at
/// most one and so do per-fold positive counts. Index lists are sorted.
pub fn split_kfold(labels: &LabelVector, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Argument(format!("k = {k}, need at least 2 folds")));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds {n} samples")));
    }
    let positives = labels.positives();
    if positives == 0 || positives == n {
        return Err(Error::Argument(
            "labels contain a single class; stratification is impossible".into(),
        ));
    }

    let mut rng = seed::rng(seed, Stream::Fold, 0, 0, 0);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| labels.as_slice()[i] == 1);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut val: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, idx) in pos.into_iter().chain(neg).enumerate() {
        val[j % k].push(idx);
    }

    Ok(val
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let mut in_val = vec![false; n];
            for &x in &v {
                in_val[x] = true;
            }
            let train = (0..n).filter(|&x| !in_val[x]).collect();
            Fold { train, val: v }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ten_samples_two_positives_five_folds() {
        let l = labels(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        let folds = split_kfold(&l, 5, 3).unwrap();
        for fold in &folds {
            assert_eq!(fold.val.len(), 2);
            let pos = fold.val.iter().filter(|&&i| l.as_slice()[i] == 1).count();
            assert!(pos <= 1);
        }
    }

    #[test]
    fn two_folds_balance_classes() {
        let l = labels(&[1, 0, 1, 0]);
        for seed in 0..10 {
            for fold in split_kfold(&l, 2, seed).unwrap() {
                let pos = fold.val.iter().filter(|&&i| l.as_slice()[i] == 1).count();
                assert_eq!((fold.val.len(), pos), (2, 1));
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let l = labels(&[1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0]);
        assert_eq!(split_kfold(&l, 3, 9).unwrap(), split_kfold(&l, 3, 9).unwrap());
        assert_ne!(split_kfold(&l, 3, 9).unwrap(), split_kfold(&l, 3, 10).unwrap());
    }

    #[test]
    fn argument_errors() {
        assert!(split_kfold(&labels(&[1, 0]), 3, 0).is_err());
        assert!(split_kfold(&labels(&[0, 0, 0]), 2, 0).is_err());
        assert!(split_kfold(&labels(&[1, 0, 1]), 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            raw in prop::collection::vec(0u8..2, 4..120),
            k in 2usize..8,
            seed in any::<u64>(),
        ) {
            let n = raw.len();
            let p = raw.iter().filter(|&&l| l == 1).count();
            prop_assume!(k <= n && p > 0 && p < n);
            let l = LabelVector::new(raw.clone()).unwrap();
            let folds = split_kfold(&l, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut seen = vec![0usize; n];
            let global = p as f64 / n as f64;
            for fold in &folds {
                prop_assert_eq!(fold.train.len() + fold.val.len(), n);
                for &i in &fold.val { seen[i] += 1; }
                let fp = fold.val.iter().filter(|&&i| raw[i] == 1).count();
                let rate = fp as f64 / fold.val.len() as f64;
                prop_assert!((rate - global).abs() <= 1.0 / fold.val.len() as f64 + 1e-12);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
