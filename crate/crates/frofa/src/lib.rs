//! Frozen feature augmentation (FroFA) and a few-shot transfer-learning
//! harness for cached vision-transformer features.
//!
//! The crate is organized around the lifecycle of an experiment:
//!
//! - [`feature_store`]: binary feature caches, npy import, synthetic data,
//!   deterministic k-shot sampling.
//! - [`frofa_core`]: the feature-to-image / image-to-feature value-range
//!   mappings and the variant-aware composition that lets pixel-style
//!   augmentations act on frozen features.
//! - [`augmentations`]: the twenty-augmentation catalog.
//! - [`protocols`]: fixed sequential pairs and the RandAugment- and
//!   TrivialAugment-style samplers over the best augmentation settings.
//! - [`map_head`]: a trainable multi-head attention pooling head with a
//!   hand-written backward pass.
//! - [`linear_probe`]: the closed-form L2-regularized probe baseline.
//! - [`trainer`]: SGD-with-momentum training, early stopping, top-1
//!   evaluation, and the hyperparameter sweep runner.
//!
//! Every random decision flows from explicit [`rng::RngKey`] derivations, so
//! runs replay identically regardless of parallelism.

pub mod augmentations;
pub mod error;
pub mod feature_store;
pub mod frofa_core;
pub mod linear_probe;
pub mod map_head;
pub mod protocols;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
