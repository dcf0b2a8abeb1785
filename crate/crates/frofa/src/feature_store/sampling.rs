//! Deterministic k-shot subsets and train/val/test carving.

use super::FeatureCache;
use crate::error::{Error, Result};
use crate::rng::RngKey;

/// A k-shot training subset: exactly `k` example indices per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSample {
    pub shot_count: usize,
    pub seed: u64,
    /// Grouped by class in class order, `k` indices per class.
    pub indices: Vec<usize>,
}

impl FewShotSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `k` distinct examples per class from a counter-based generator
/// keyed by `(seed, class)`. Seeds 0..4 give the five shot replicas.
pub fn sample_few_shot(cache: &FeatureCache, k: usize, seed: u64) -> Result<FewShotSample> {
    sample_few_shot_within(cache, &all_indices(cache), k, seed)
}

/// Same as [`sample_few_shot`] but restricted to a pool of candidate indices
/// (used to keep the k-shot draw inside the training portion of a split).
pub fn sample_few_shot_within(
    cache: &FeatureCache,
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<FewShotSample> {
    let mut by_class = vec![Vec::new(); cache.num_classes() as usize];
    for &i in pool {
        by_class[cache.labels[i] as usize].push(i);
    }
    let key = RngKey::new(seed).child_str("few_shot");
    let mut indices = Vec::with_capacity(k * by_class.len());
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::NotEnoughExamples {
                class: class as u32,
                available: members.len(),
                k,
            });
        }
        let mut rng = key.child(class as u64).stream();
        for pick in rng.sample_distinct(members.len(), k) {
            indices.push(members[pick]);
        }
    }
    Ok(FewShotSample {
        shot_count: k,
        seed,
        indices,
    })
}

fn all_indices(cache: &FeatureCache) -> Vec<usize> {
    (0..cache.len()).collect()
}

/// Disjoint train-pool/validation/test example indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_pool: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Carves a single cache into per-class train-pool/val/test portions.
///
/// The carve is keyed by `split_seed` only, so every shot replica of an
/// experiment shares the same validation and test examples while drawing its
/// k-shot subset from the same training pool. Fractions are applied per
/// class; val and test get at least one example each when the fraction is
/// nonzero and the class is large enough.
pub fn split_train_val_test(
    cache: &FeatureCache,
    val_fraction: f64,
    test_fraction: f64,
    split_seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&val_fraction)
        || !(0.0..1.0).contains(&test_fraction)
        || val_fraction + test_fraction >= 1.0
    {
        return Err(Error::InvalidConfig(format!(
            "val fraction {val_fraction} + test fraction {test_fraction} must leave room for training"
        )));
    }
    let key = RngKey::new(split_seed).child_str("split");
    let mut split = DatasetSplit {
        train_pool: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, members) in cache.indices_by_class().into_iter().enumerate() {
        let mut order = members;
        key.child(class as u64).stream().shuffle(&mut order);
        let total = order.len();
        let mut n_val = (total as f64 * val_fraction).round() as usize;
        let mut n_test = (total as f64 * test_fraction).round() as usize;
        if val_fraction > 0.0 && n_val == 0 && total >= 3 {
            n_val = 1;
        }
        if test_fraction > 0.0 && n_test == 0 && total >= 3 {
            n_test = 1;
        }
        if n_val + n_test >= total {
            return Err(Error::InvalidConfig(format!(
                "class {class} has only {total} examples; cannot carve val+test from it"
            )));
        }
        split.val.extend(order.drain(..n_val));
        split.test.extend(order.drain(..n_test));
        split.train_pool.extend(order);
    }
    split.train_pool.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::super::{CacheManifest, FeatureTensor, Layout};
    use super::*;

    fn cache_with_classes(per_class: &[usize]) -> FeatureCache {
        let mut labels = Vec::new();
        for (class, &count) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(class as u32).take(count));
        }
        let e = labels.len();
        let features = (0..e)
            .map(|i| FeatureTensor::new(vec![i as f32; 4], 4, 1).unwrap())
            .collect();
        let manifest = CacheManifest {
            version: 1,
            layout: Layout::TokenGrid,
            n: 4,
            c: 1,
            num_examples: e as u64,
            num_classes: per_class.len() as u32,
            split_name: String::new(),
            source: String::new(),
        };
        FeatureCache::new(manifest, labels, features).unwrap()
    }

    #[test]
    fn one_shot_takes_one_per_class() {
        let cache = cache_with_classes(&[5, 5, 5]);
        let s = sample_few_shot(&cache, 1, 0).unwrap();
        assert_eq!(s.len(), 3);
        let classes: Vec<u32> = s.indices.iter().map(|&i| cache.labels[i]).collect();
        assert_eq!(classes, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cache = cache_with_classes(&[10, 10]);
        let a = sample_few_shot(&cache, 3, 7).unwrap();
        let b = sample_few_shot(&cache, 3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equals_class_size_takes_whole_class() {
        let cache = cache_with_classes(&[4, 4]);
        let s = sample_few_shot(&cache, 4, 1).unwrap();
        let mut idx = s.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn class_too_small_is_an_error() {
        let cache = cache_with_classes(&[4, 2]);
        assert!(matches!(
            sample_few_shot(&cache, 3, 0),
            Err(Error::NotEnoughExamples { class: 1, available: 2, k: 3 })
        ));
    }

    #[test]
    fn replicas_differ_across_seeds() {
        // with 40 examples per class and k=2, five replicas almost surely
        // pick different index sets; assert they are not all identical
        let cache = cache_with_classes(&[40, 40, 40]);
        let samples: Vec<_> = (0..5)
            .map(|seed| sample_few_shot(&cache, 2, seed).unwrap().indices)
            .collect();
        assert!(samples.iter().any(|s| s != &samples[0]));
    }

    #[test]
    fn indices_are_unique_and_stratified() {
        let cache = cache_with_classes(&[8, 8, 8, 8]);
        let s = sample_few_shot(&cache, 3, 2).unwrap();
        let mut sorted = s.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
        for (class, chunk) in s.indices.chunks(3).enumerate() {
            for &i in chunk {
                assert_eq!(cache.labels[i], class as u32);
            }
        }
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let cache = cache_with_classes(&[20, 20]);
        let split = split_train_val_test(&cache, 0.25, 0.25, 0).unwrap();
        let mut all: Vec<usize> = split
            .train_pool
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(split.val.len(), 10);
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train_pool.len(), 20);
    }

    #[test]
    fn split_keyed_by_seed_only() {
        let cache = cache_with_classes(&[12, 12, 12]);
        let a = split_train_val_test(&cache, 0.25, 0.25, 3).unwrap();
        let b = split_train_val_test(&cache, 0.25, 0.25, 3).unwrap();
        let c = split_train_val_test(&cache, 0.25, 0.25, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
