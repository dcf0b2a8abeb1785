//! Token- and channel-level dropouts on the 2-D token view.

use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::rng::KeyedRng;

/// Keeps `keep` of the N token rows, in uniformly random order, values
/// untouched. The kept subset and its ordering come from one partial
/// Fisher-Yates pass.
pub fn patch_dropout(t: &FeatureTensor, keep: usize, rng: &mut KeyedRng) -> Result<FeatureTensor> {
    let n = t.tokens();
    if keep == 0 || keep > n {
        return Err(Error::InvalidAugmentation(format!(
            "patch_dropout keeps {keep} of {n} tokens"
        )));
    }
    let picks = rng.sample_distinct(n, keep);
    let mut data = Vec::with_capacity(keep * t.channels());
    for &row in &picks {
        data.extend_from_slice(t.token(row));
    }
    FeatureTensor::new(data, keep, t.channels())
}

/// Zeroes the flagged channels across all tokens. Surviving channels are
/// not rescaled; gate sampling is the caller's.
pub fn channel_dropout_with(t: &mut FeatureTensor, zeroed: &[bool]) {
    debug_assert_eq!(zeroed.len(), t.channels());
    let channels = t.channels();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if zeroed[i % channels] {
            *v = 0.0;
        }
    }
}
