use super::{
    derive_global_quality, generate_volume, ConceptGrades, PhantomSpec, PhantomVolume, MAX_GRADE,
    MAX_NOISE_LEVEL, NUM_GRADES,
};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// Every class needs at least this many members so folds can stratify.
    pub const MIN_PER_CLASS: usize = 2;

    pub fn new(count: usize, seed: u64) -> Self {
        DatasetConfig {
            count,
            depth: 24,
            height: 192,
            width: 192,
            seed,
        }
    }

    pub fn with_shape(mut self, depth: usize, height: usize, width: usize) -> Self {
        self.depth = depth;
        self.height = height;
        self.width = width;
        self
    }

    /// Per-class target counts: equal split, remainder to the lowest classes.
    pub fn class_targets(&self) -> Result<[usize; NUM_GRADES]> {
        let min = Self::MIN_PER_CLASS * NUM_GRADES;
        if self.count < min {
            return Err(Error::validation(format!(
                "cannot balance {} volumes over {NUM_GRADES} classes within ±1 \
                 with at least {} per class (need count >= {min})",
                self.count,
                Self::MIN_PER_CLASS
            )));
        }
        let base = self.count / NUM_GRADES;
        let extra = self.count % NUM_GRADES;
        let mut targets = [base; NUM_GRADES];
        targets.iter_mut().take(extra).for_each(|t| *t += 1);
        Ok(targets)
    }
}

/// Generate a class-balanced dataset.
///
/// Grades and noise levels are drawn uniformly and independently; a draw is
/// rejected when its global class is already full. Volume seeds come from the
/// same master stream, so the result is a pure function of the config.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<PhantomVolume>> {
    let targets = config.class_targets()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut filled = [0usize; NUM_GRADES];
    let mut specs = Vec::with_capacity(config.count);
    while specs.len() < config.count {
        let grades = ConceptGrades {
            sharpness: rng.random_range(0..=MAX_GRADE),
            nulling: rng.random_range(0..=MAX_GRADE),
            aorta: rng.random_range(0..=MAX_GRADE),
        };
        let noise_level = rng.random_range(0..=MAX_NOISE_LEVEL);
        let seed: u64 = rng.random();
        let y = derive_global_quality(grades, noise_level)? as usize;
        if filled[y] < targets[y] {
            filled[y] += 1;
            specs.push(PhantomSpec::new(grades, noise_level, seed).with_shape(
                config.depth,
                config.height,
                config.width,
            ));
        }
    }
    specs
        .par_iter()
        .enumerate()
        .map(|(id, spec)| {
            let mut vol = generate_volume(spec)?;
            vol.id = id;
            Ok(vol)
        })
        .collect()
}

pub(crate) fn class_counts(volumes: &[PhantomVolume]) -> [usize; NUM_GRADES] {
    let mut counts = [0; NUM_GRADES];
    for v in volumes {
        counts[v.y_vol as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_within_one() {
        let cfg = DatasetConfig::new(30, 5).with_shape(8, 64, 64);
        let vols = generate_dataset(&cfg).unwrap();
        assert_eq!(vols.len(), 30);
        let counts = class_counts(&vols);
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(max - min <= 1, "{counts:?}");
        for (i, v) in vols.iter().enumerate() {
            assert_eq!(v.id, i);
        }
    }

    #[test]
    fn targets_for_120_are_exact_quarters() {
        assert_eq!(DatasetConfig::new(120, 0).class_targets().unwrap(), [30; 4]);
        assert_eq!(
            DatasetConfig::new(10, 0).class_targets().unwrap(),
            [3, 3, 2, 2]
        );
    }

    #[test]
    fn too_few_volumes_rejected() {
        assert!(DatasetConfig::new(7, 0).class_targets().is_err());
        assert!(DatasetConfig::new(8, 0).class_targets().is_ok());
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = DatasetConfig::new(8, 99).with_shape(8, 64, 64);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }
}
