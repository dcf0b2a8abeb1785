//! Synthetic class-conditional Gaussian features.
//!
//! A desk-scale stand-in for real cached backbone features: each class gets
//! a mean vector drawn once per (class, channel), and every token of every
//! example adds independent noise around that mean. Larger
//! `cluster_scale / noise_scale` ratios give more separable classes.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{CacheManifest, FeatureCache, FeatureTensor, Layout, CACHE_VERSION};
use crate::error::{Error, Result};
use crate::rng::RngKey;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_classes: u32,
    pub per_class: usize,
    pub tokens: usize,
    pub channels: usize,
    pub cluster_scale: f32,
    pub noise_scale: f32,
    pub seed: u64,
}

/// Generates a synthetic cache, deterministic in `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<FeatureCache> {
    if config.num_classes < 2 || config.per_class == 0 || config.tokens == 0 || config.channels == 0
    {
        return Err(Error::InvalidConfig(
            "num_classes >= 2 and per_class, tokens, channels positive required".into(),
        ));
    }
    let key = RngKey::new(config.seed).child_str("synth");
    let means_key = key.child_str("means");
    let noise_key = key.child_str("noise");

    let s = config.num_classes as usize;
    let mut means = vec![0.0f32; s * config.channels];
    for class in 0..s {
        let mut rng = means_key.child(class as u64).stream();
        for c in 0..config.channels {
            let z: f64 = rng.sample(StandardNormal);
            means[class * config.channels + c] = (z as f32) * config.cluster_scale;
        }
    }

    let e = s * config.per_class;
    let mut labels = Vec::with_capacity(e);
    let mut features = Vec::with_capacity(e);
    for class in 0..s {
        let class_means = &means[class * config.channels..(class + 1) * config.channels];
        for rep in 0..config.per_class {
            let example = (class * config.per_class + rep) as u64;
            let mut rng = noise_key.child(example).stream();
            let mut data = Vec::with_capacity(config.tokens * config.channels);
            for _ in 0..config.tokens {
                for &mean in class_means {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(mean + (z as f32) * config.noise_scale);
                }
            }
            labels.push(class as u32);
            features.push(FeatureTensor::new(data, config.tokens, config.channels)?);
        }
    }

    let manifest = CacheManifest {
        version: CACHE_VERSION,
        layout: Layout::TokenGrid,
        n: config.tokens as u32,
        c: config.channels as u32,
        num_examples: e as u64,
        num_classes: config.num_classes,
        split_name: "synthetic".into(),
        source: format!(
            "synthetic(classes={}, per_class={}, n={}, c={}, cluster={}, noise={}, seed={})",
            config.num_classes,
            config.per_class,
            config.tokens,
            config.channels,
            config.cluster_scale,
            config.noise_scale,
            config.seed
        ),
    };
    FeatureCache::new(manifest, labels, features)
}
