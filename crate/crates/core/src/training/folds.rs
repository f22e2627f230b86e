use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Index sets of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn by_class(labels: &[u8]) -> Vec<Vec<usize>> {
    let classes = labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        out[y as usize].push(i);
    }
    out
}

/// Stratified `k`-fold split. Test folds partition the indices; each fold's
/// validation set is a stratified `val_fraction` of its training portion.
pub fn make_folds(labels: &[u8], k: usize, seed: u64, val_fraction: f64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {k}")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::validation(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut groups = by_class(labels);
    for (class, members) in groups.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::validation(format!(
                "class {class} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    // Deal each shuffled class round-robin, continuing where the previous
    // class stopped so fold sizes stay within one of each other.
    let mut next = 0;
    for members in groups.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }

    let mut folds = Vec::with_capacity(k);
    for test in tests.iter_mut() {
        test.sort_unstable();
        let in_test: std::collections::HashSet<usize> = test.iter().copied().collect();
        let rest: Vec<usize> = (0..labels.len()).filter(|i| !in_test.contains(i)).collect();
        let rest_labels: Vec<u8> = rest.iter().map(|&i| labels[i]).collect();
        let mut val = Vec::new();
        let mut train = Vec::new();
        for members in by_class(&rest_labels) {
            let mut members: Vec<usize> = members.into_iter().map(|j| rest[j]).collect();
            members.shuffle(&mut rng);
            let n_val = (members.len() as f64 * val_fraction).round() as usize;
            let n_val = n_val.min(members.len().saturating_sub(1));
            val.extend_from_slice(&members[..n_val]);
            train.extend_from_slice(&members[n_val..]);
        }
        if val.is_empty() && val_fraction > 0.0 && train.len() > 1 {
            // Tiny splits: still hold out one sample.
            val.push(train.pop().expect("non-empty"));
        }
        train.sort_unstable();
        val.sort_unstable();
        folds.push(Fold {
            train,
            val,
            test: test.clone(),
        });
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i % 4) as u8).collect()
    }

    #[test]
    fn balanced_120_three_folds() {
        let labels = balanced(120);
        let folds = make_folds(&labels, 3, 7, 0.1).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 40);
            for c in 0..4u8 {
                assert_eq!(f.test.iter().filter(|&&i| labels[i] == c).count(), 10);
                assert_eq!(f.val.iter().filter(|&&i| labels[i] == c).count(), 2);
            }
            assert_eq!(f.train.len() + f.val.len(), 80);
        }
    }

    #[test]
    fn deterministic() {
        let labels = balanced(40);
        assert_eq!(
            make_folds(&labels, 3, 1, 0.1).unwrap(),
            make_folds(&labels, 3, 1, 0.1).unwrap()
        );
        assert_ne!(
            make_folds(&labels, 3, 1, 0.1).unwrap(),
            make_folds(&labels, 3, 2, 0.1).unwrap()
        );
    }

    #[test]
    fn too_few_per_class() {
        let labels = vec![0, 0, 0, 1, 1, 2, 2, 2];
        assert!(make_folds(&labels, 3, 0, 0.1).is_err());
        assert!(make_folds(&labels, 2, 0, 0.1).is_ok());
    }

    proptest! {
        #[test]
        fn partition_and_stratification(counts in prop::collection::vec(3usize..15, 4), k in 2usize..4, seed in 0u64..1000) {
            let mut labels = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                labels.extend(std::iter::repeat_n(c as u8, n));
            }
            let folds = make_folds(&labels, k, seed, 0.1).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                }
                let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                for (c, &n) in counts.iter().enumerate() {
                    let got = f.test.iter().filter(|&&i| labels[i] as usize == c).count() as f64;
                    prop_assert!((got - n as f64 / k as f64).abs() <= 1.0);
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
