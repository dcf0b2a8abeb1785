//! Mixup over a batch of (features, label distribution) pairs.
//!
//! Raw feature space: `z * f_i + (1 - z) * f_j` with `z ~ Beta(alpha, alpha)`
//! and the same `z` mixing the label vectors, so labels stay on the simplex.

use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::rng::KeyedRng;

/// One training example as seen by the head: tokens plus a label
/// distribution over the classes.
pub type LabeledExample = (FeatureTensor, Vec<f32>);

/// Deterministic kernel: mixes example `i` with `batch[partners[i]]` using
/// blend `zs[i]`. The partner values are read from the pre-mix batch.
pub fn mixup_with(batch: &mut [LabeledExample], partners: &[usize], zs: &[f64]) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::InvalidAugmentation(
            "mixup needs a batch of at least 2 examples".into(),
        ));
    }
    debug_assert_eq!(batch.len(), partners.len());
    debug_assert_eq!(batch.len(), zs.len());
    let snapshot: Vec<LabeledExample> = batch.to_vec();
    for (i, (features, label)) in batch.iter_mut().enumerate() {
        let (partner_features, partner_label) = &snapshot[partners[i]];
        if partner_features.tokens() != features.tokens()
            || partner_features.channels() != features.channels()
        {
            return Err(Error::ShapeMismatch(
                "mixup partners must share a shape".into(),
            ));
        }
        let z = zs[i];
        for (v, &p) in features.data_mut().iter_mut().zip(partner_features.data()) {
            *v = (z * *v as f64 + (1.0 - z) * p as f64) as f32;
        }
        for (y, &p) in label.iter_mut().zip(partner_label) {
            *y = (z * *y as f64 + (1.0 - z) * p as f64) as f32;
        }
    }
    Ok(())
}

/// Samples partners (a uniformly random permutation) and per-pair blends
/// from `Beta(alpha, alpha)`, then mixes.
pub fn mixup_batch(batch: &mut [LabeledExample], alpha: f64, rng: &mut KeyedRng) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::InvalidAugmentation(
            "mixup needs a batch of at least 2 examples".into(),
        ));
    }
    let mut partners: Vec<usize> = (0..batch.len()).collect();
    rng.shuffle(&mut partners);
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::InvalidAugmentation(format!("bad mixup alpha {alpha}: {e}")))?;
    let zs: Vec<f64> = (0..batch.len()).map(|_| beta.sample(rng)).collect();
    mixup_with(batch, &partners, &zs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    fn example(fill: f32, hot: usize, classes: usize) -> LabeledExample {
        let mut label = vec![0.0; classes];
        label[hot] = 1.0;
        (FeatureTensor::new(vec![fill; 4], 4, 1).unwrap(), label)
    }

    #[test]
    fn z_one_keeps_examples() {
        let mut batch = vec![example(1.0, 0, 3), example(2.0, 1, 3)];
        mixup_with(&mut batch, &[1, 0], &[1.0, 1.0]).unwrap();
        assert_eq!(batch[0].0.data(), &[1.0; 4]);
        assert_eq!(batch[0].1, vec![1.0, 0.0, 0.0]);
        assert_eq!(batch[1].0.data(), &[2.0; 4]);
    }

    #[test]
    fn half_blend_mixes_one_hot_labels() {
        let mut batch = vec![example(0.0, 0, 3), example(1.0, 1, 3)];
        mixup_with(&mut batch, &[1, 0], &[0.5, 0.5]).unwrap();
        assert_eq!(batch[0].1, vec![0.5, 0.5, 0.0]);
        assert!((batch[0].0.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn labels_stay_on_the_simplex() {
        let mut rng = RngKey::new(9).stream();
        let mut batch: Vec<LabeledExample> =
            (0..8).map(|i| example(i as f32, i % 4, 4)).collect();
        mixup_batch(&mut batch, 0.3, &mut rng).unwrap();
        for (_, label) in &batch {
            let sum: f32 = label.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(label.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn batch_of_one_rejected() {
        let mut batch = vec![example(0.0, 0, 2)];
        let mut rng = RngKey::new(0).stream();
        assert!(mixup_batch(&mut batch, 0.5, &mut rng).is_err());
    }

    #[test]
    fn deterministic_under_a_fixed_key() {
        let make = || -> Vec<LabeledExample> { (0..6).map(|i| example(i as f32, i % 3, 3)).collect() };
        let mut a = make();
        let mut b = make();
        mixup_batch(&mut a, 0.4, &mut RngKey::new(5).stream()).unwrap();
        mixup_batch(&mut b, 0.4, &mut RngKey::new(5).stream()).unwrap();
        for ((fa, la), (fb, lb)) in a.iter().zip(&b) {
            assert_eq!(fa.data(), fb.data());
            assert_eq!(la, lb);
        }
    }
}
