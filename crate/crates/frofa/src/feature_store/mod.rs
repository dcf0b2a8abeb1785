//! On-disk frozen-feature caches and deterministic few-shot sampling.
//!
//! A cache is a flat list of examples, each an `N x C` token matrix with an
//! integer label. Caches are immutable once written; readers may share them
//! freely. All sampling is a pure function of explicit keys.

mod cache;
mod npy;
mod sampling;
mod synth;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use npy::import_npy;
pub use sampling::{
    sample_few_shot, sample_few_shot_within, split_train_val_test, DatasetSplit, FewShotSample,
};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One example's frozen features: N tokens by C channels, row-major.
///
/// The same buffer serves as the 2-D token view and, when N is a perfect
/// square, as the 3-D `side x side x C` grid view: grid element
/// `(n1, n2, c)` is token element `(n1 * side + n2, c)`. No data moves
/// between the views.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Vec<f32>,
    tokens: usize,
    channels: usize,
}

impl FeatureTensor {
    pub fn new(data: Vec<f32>, tokens: usize, channels: usize) -> Result<Self> {
        if tokens == 0 || channels == 0 || data.len() != tokens * channels {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values does not form a {}x{} tensor",
                data.len(),
                tokens,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(
                "tensor contains non-finite values".into(),
            ));
        }
        Ok(FeatureTensor {
            data,
            tokens,
            channels,
        })
    }

    pub fn zeros(tokens: usize, channels: usize) -> Self {
        FeatureTensor {
            data: vec![0.0; tokens * channels],
            tokens,
            channels,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Token row n.
    pub fn token(&self, n: usize) -> &[f32] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    /// Side length of the 3-D grid view, if N is a perfect square.
    pub fn grid_side(&self) -> Option<usize> {
        let side = (self.tokens as f64).sqrt().round() as usize;
        (side * side == self.tokens).then_some(side)
    }

    #[inline]
    pub fn at(&self, token: usize, channel: usize) -> f32 {
        self.data[token * self.channels + channel]
    }

    /// Grid view accessor: row n1, column n2, channel c.
    #[inline]
    pub fn at_grid(&self, side: usize, n1: usize, n2: usize, c: usize) -> f32 {
        self.data[(n1 * side + n2) * self.channels + c]
    }

    #[inline]
    pub fn set_grid(&mut self, side: usize, n1: usize, n2: usize, c: usize, value: f32) {
        self.data[(n1 * side + n2) * self.channels + c] = value;
    }

    /// Min and max over the whole tensor.
    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Min and max of one channel across all tokens.
    pub fn channel_min_max(&self, c: usize) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        let mut i = c;
        while i < self.data.len() {
            let v = self.data[i];
            lo = lo.min(v);
            hi = hi.max(v);
            i += self.channels;
        }
        (lo, hi)
    }
}

/// Physical layout of cached features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// N tokens per example; grid operations apply when N is square.
    TokenGrid,
    /// A single pooled vector per example (N = 1).
    Pooled,
}

impl Layout {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Layout::TokenGrid => 0,
            Layout::Pooled => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Layout::TokenGrid),
            1 => Ok(Layout::Pooled),
            other => Err(Error::ShapeMismatch(format!("unknown layout byte {other}"))),
        }
    }
}

/// Dataset bookkeeping stored with every cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    pub layout: Layout,
    /// Tokens per example (1 for pooled caches).
    pub n: u32,
    /// Channels per token.
    pub c: u32,
    pub num_examples: u64,
    pub num_classes: u32,
    #[serde(default)]
    pub split_name: String,
    #[serde(default)]
    pub source: String,
}

impl CacheManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_examples < 1 {
            return Err(Error::ShapeMismatch("cache must hold at least 1 example".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::ShapeMismatch(
                "cache must declare at least 2 classes".into(),
            ));
        }
        if self.n == 0 || self.c == 0 {
            return Err(Error::ShapeMismatch("N and C must be positive".into()));
        }
        if self.layout == Layout::Pooled && self.n != 1 {
            return Err(Error::ShapeMismatch("pooled layout requires N = 1".into()));
        }
        Ok(())
    }
}

/// An in-memory feature dataset: manifest, labels, and one tensor per example.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub manifest: CacheManifest,
    pub labels: Vec<u32>,
    pub features: Vec<FeatureTensor>,
}

impl FeatureCache {
    pub fn new(
        manifest: CacheManifest,
        labels: Vec<u32>,
        features: Vec<FeatureTensor>,
    ) -> Result<Self> {
        manifest.validate()?;
        if labels.len() as u64 != manifest.num_examples
            || features.len() as u64 != manifest.num_examples
        {
            return Err(Error::ShapeMismatch(format!(
                "manifest declares {} examples, got {} labels and {} tensors",
                manifest.num_examples,
                labels.len(),
                features.len()
            )));
        }
        for &label in &labels {
            if label >= manifest.num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: manifest.num_classes,
                });
            }
        }
        for t in &features {
            if t.tokens() != manifest.n as usize || t.channels() != manifest.c as usize {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {}x{} does not match manifest {}x{}",
                    t.tokens(),
                    t.channels(),
                    manifest.n,
                    manifest.c
                )));
            }
        }
        Ok(FeatureCache {
            manifest,
            labels,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> u32 {
        self.manifest.num_classes
    }

    /// Example indices per class, in cache order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.manifest.num_classes as usize];
        for (i, &label) in self.labels.iter().enumerate() {
            by_class[label as usize].push(i);
        }
        by_class
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_view_is_a_pure_reshape() {
        // element (n1, n2, c) of the grid is element (n1*side + n2, c) of the
        // token view, for every position
        let side = 3;
        let c = 2;
        let data: Vec<f32> = (0..side * side * c).map(|i| i as f32).collect();
        let t = FeatureTensor::new(data, side * side, c).unwrap();
        assert_eq!(t.grid_side(), Some(side));
        for n1 in 0..side {
            for n2 in 0..side {
                for ch in 0..c {
                    assert_eq!(t.at_grid(side, n1, n2, ch), t.at(n1 * side + n2, ch));
                }
            }
        }
    }

    #[test]
    fn non_square_has_no_grid() {
        let t = FeatureTensor::new(vec![0.0; 6], 6, 1).unwrap();
        assert_eq!(t.grid_side(), None);
        let t = FeatureTensor::new(vec![0.0; 2], 2, 1).unwrap();
        assert_eq!(t.grid_side(), None);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureTensor::new(vec![0.0, f32::NAN], 2, 1).is_err());
        assert!(FeatureTensor::new(vec![f32::INFINITY, 0.0], 1, 2).is_err());
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(FeatureTensor::new(vec![0.0; 5], 2, 2).is_err());
        assert!(FeatureTensor::new(vec![], 0, 0).is_err());
    }

    #[test]
    fn channel_min_max_matches_scan() {
        let t = FeatureTensor::new(vec![1.0, -5.0, 2.0, 7.0, -3.0, 0.0], 3, 2).unwrap();
        assert_eq!(t.channel_min_max(0), (-3.0, 2.0));
        assert_eq!(t.channel_min_max(1), (-5.0, 7.0));
        assert_eq!(t.min_max(), (-5.0, 7.0));
    }
}
