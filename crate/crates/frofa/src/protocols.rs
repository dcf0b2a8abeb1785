//! Augmentation protocols: single ops, fixed sequential pairs, and the
//! RandAugment- and TrivialAugment-style samplers over a pool of best
//! settings.

use serde::{Deserialize, Serialize};

use crate::augmentations::{mixup, AugKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::frofa_core::{apply_frofa, Variant};
use crate::rng::RngKey;

/// The study's best per-augmentation settings: brightness channel2 at
/// v = 1.0, contrast at v = 5, posterize channel with shifts 1..8.
pub fn best_brightness() -> AugmentationSpec {
    AugmentationSpec::with_variant(AugKind::Brightness, 1.0, None, Variant::Channel2).unwrap()
}

pub fn best_contrast() -> AugmentationSpec {
    AugmentationSpec::new(AugKind::Contrast, 5.0).unwrap()
}

pub fn best_posterize() -> AugmentationSpec {
    AugmentationSpec::with_variant(AugKind::Posterize, 1.0, Some(8.0), Variant::Channel).unwrap()
}

/// Pool identifier for the sampled protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    /// Brightness c2 and posterize c.
    Top2,
    /// Brightness c2, contrast, and posterize c.
    Top3,
}

impl Pool {
    pub fn ops(self) -> Vec<AugmentationSpec> {
        match self {
            Pool::Top2 => vec![best_brightness(), best_posterize()],
            Pool::Top3 => vec![best_brightness(), best_contrast(), best_posterize()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Single,
    Sequential,
    RandAugmentStar,
    TrivialAugmentStar,
}

/// A composition of augmentations applied per training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub mode: PipelineMode,
    /// Ordered ops for single/sequential modes.
    #[serde(default)]
    pub ops: Vec<AugmentationSpec>,
    /// Pool for the sampled modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Pool>,
}

impl Pipeline {
    pub fn single(op: AugmentationSpec) -> Result<Self> {
        let pipeline = Pipeline {
            mode: PipelineMode::Single,
            ops: vec![op],
            pool: None,
        };
        pipeline.validate()?;
        Ok(pipeline)
    }

    pub fn sequential(first: AugmentationSpec, second: AugmentationSpec) -> Result<Self> {
        let pipeline = Pipeline {
            mode: PipelineMode::Sequential,
            ops: vec![first, second],
            pool: None,
        };
        pipeline.validate()?;
        Ok(pipeline)
    }

    pub fn rand_augment_star(pool: Pool) -> Self {
        Pipeline {
            mode: PipelineMode::RandAugmentStar,
            ops: Vec::new(),
            pool: Some(pool),
        }
    }

    pub fn trivial_augment_star(pool: Pool) -> Self {
        Pipeline {
            mode: PipelineMode::TrivialAugmentStar,
            ops: Vec::new(),
            pool: Some(pool),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            PipelineMode::Single => {
                if self.ops.len() != 1 {
                    return Err(Error::InvalidPipeline(format!(
                        "single mode takes exactly 1 op, got {}",
                        self.ops.len()
                    )));
                }
            }
            PipelineMode::Sequential => {
                if self.ops.len() != 2 {
                    return Err(Error::InvalidPipeline(format!(
                        "sequential mode takes exactly 2 ops, got {}",
                        self.ops.len()
                    )));
                }
            }
            PipelineMode::RandAugmentStar | PipelineMode::TrivialAugmentStar => {
                if self.pool.is_none() {
                    return Err(Error::InvalidPipeline("sampled modes need a pool".into()));
                }
                if !self.ops.is_empty() {
                    return Err(Error::InvalidPipeline(
                        "sampled modes take their ops from the pool".into(),
                    ));
                }
            }
        }
        for op in &self.ops {
            op.validate()?;
            // mixup needs the whole batch; it cannot feed or follow another op
            if op.kind == AugKind::Mixup && self.ops.len() != 1 {
                return Err(Error::InvalidPipeline(
                    "mixup cannot be composed with other ops".into(),
                ));
            }
        }
        Ok(())
    }

    /// The ops this pipeline would apply to one example, in order, given the
    /// per-example key. Sampled modes draw from the pool here.
    pub fn resolve_ops(&self, key: RngKey) -> Vec<AugmentationSpec> {
        match self.mode {
            PipelineMode::Single | PipelineMode::Sequential => self.ops.clone(),
            PipelineMode::RandAugmentStar => {
                let pool = self.pool.expect("validated").ops();
                let mut rng = key.child_str("ra").stream();
                // sequence length uniform in 1..=|pool|, ops distinct, in
                // sampled order
                let len = 1 + rng.below(pool.len());
                rng.sample_distinct(pool.len(), len)
                    .into_iter()
                    .map(|i| pool[i].clone())
                    .collect()
            }
            PipelineMode::TrivialAugmentStar => {
                let pool = self.pool.expect("validated").ops();
                let mut rng = key.child_str("ta").stream();
                vec![pool[rng.below(pool.len())].clone()]
            }
        }
    }

    pub fn contains_mixup(&self) -> bool {
        self.ops.iter().any(|op| op.kind == AugKind::Mixup)
    }

    /// True when every (kind, variant) pairing this pipeline can apply was
    /// evaluated by the study; echoed into metrics otherwise.
    pub fn paper_evaluated(&self) -> bool {
        let from_pool = self
            .pool
            .map(|p| p.ops().iter().all(|op| op.paper_evaluated_variant()))
            .unwrap_or(true);
        from_pool && self.ops.iter().all(|op| op.paper_evaluated_variant())
    }

    /// Compact identifier for metrics files.
    pub fn id(&self) -> String {
        match self.mode {
            PipelineMode::Single => self.ops[0].id(),
            PipelineMode::Sequential => format!("{}->{}", self.ops[0].id(), self.ops[1].id()),
            PipelineMode::RandAugmentStar => match self.pool {
                Some(Pool::Top2) => "ra_star_top2".into(),
                _ => "ra_star_top3".into(),
            },
            PipelineMode::TrivialAugmentStar => match self.pool {
                Some(Pool::Top2) => "ta_star_top2".into(),
                _ => "ta_star_top3".into(),
            },
        }
    }
}

/// Applies the pipeline to one example. `key` must already identify the
/// example (and step); op index is derived internally. Mixup is rejected
/// here; use [`augment_batch`].
pub fn apply_pipeline(
    pipeline: &Pipeline,
    example: &FeatureTensor,
    key: RngKey,
) -> Result<FeatureTensor> {
    pipeline.validate()?;
    let ops = pipeline.resolve_ops(key);
    let mut current = example.clone();
    for (op_index, op) in ops.iter().enumerate() {
        current = apply_frofa(&current, op, key.child(op_index as u64))?;
    }
    Ok(current)
}

/// Applies the pipeline to a labeled batch: per-example ops keyed by batch
/// slot, or batch-level mixup when the pipeline is a mixup op.
pub fn augment_batch(
    pipeline: &Pipeline,
    batch: &mut [mixup::LabeledExample],
    key: RngKey,
) -> Result<()> {
    pipeline.validate()?;
    if pipeline.contains_mixup() {
        let alpha = pipeline.ops[0].v;
        return mixup::mixup_batch(batch, alpha, &mut key.child_str("mixup").stream());
    }
    for (slot, (features, _)) in batch.iter_mut().enumerate() {
        let example_key = key.child(slot as u64);
        *features = apply_pipeline(pipeline, features, example_key)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn witness_tensor() -> FeatureTensor {
        let values: Vec<f32> = (0..32)
            .map(|i| ((i * 13 % 17) as f32 - 8.0) * 0.7)
            .collect();
        FeatureTensor::new(values, 16, 2).unwrap()
    }

    #[test]
    fn sequential_identities_change_nothing() {
        let identity = AugmentationSpec::new(AugKind::Brightness, 0.0).unwrap();
        let pipeline = Pipeline::sequential(identity.clone(), identity).unwrap();
        let t = witness_tensor();
        let out = apply_pipeline(&pipeline, &t, RngKey::new(0)).unwrap();
        assert_eq!(out.data(), t.data());
    }

    #[test]
    fn sequential_applies_in_listed_order() {
        // brightness c2 then posterize c does not commute with the reverse
        // order; the pipeline must equal the forward composition under the
        // keys it derives
        let b = best_brightness();
        let p = best_posterize();
        let pipeline = Pipeline::sequential(b.clone(), p.clone()).unwrap();
        let t = witness_tensor();
        let key = RngKey::new(42);

        let out = apply_pipeline(&pipeline, &t, key).unwrap();
        let manual =
            apply_frofa(&apply_frofa(&t, &b, key.child(0)).unwrap(), &p, key.child(1)).unwrap();
        assert_eq!(out.data(), manual.data());

        let reversed =
            apply_frofa(&apply_frofa(&t, &p, key.child(1)).unwrap(), &b, key.child(0)).unwrap();
        assert_ne!(out.data(), reversed.data());
    }

    #[test]
    fn rand_augment_lengths_and_distinctness() {
        let pipeline = Pipeline::rand_augment_star(Pool::Top3);
        let mut seen_lengths = std::collections::HashSet::new();
        for seed in 0..2_000u64 {
            let ops = pipeline.resolve_ops(RngKey::new(seed));
            assert!((1..=3).contains(&ops.len()));
            seen_lengths.insert(ops.len());
            let mut ids: Vec<_> = ops.iter().map(|o| o.id()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), ops.len(), "ops within one draw are distinct");
        }
        assert_eq!(seen_lengths.len(), 3, "all lengths 1..=3 occur");
    }

    #[test]
    fn trivial_augment_draws_single_pool_members() {
        let pipeline = Pipeline::trivial_augment_star(Pool::Top2);
        let pool_ids: Vec<String> = Pool::Top2.ops().iter().map(|o| o.id()).collect();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200u64 {
            let ops = pipeline.resolve_ops(RngKey::new(seed));
            assert_eq!(ops.len(), 1);
            assert!(pool_ids.contains(&ops[0].id()));
            seen.insert(ops[0].id());
        }
        assert_eq!(seen.len(), 2, "both pool members occur across seeds");
    }

    #[test]
    fn pipeline_application_is_deterministic() {
        let pipeline = Pipeline::rand_augment_star(Pool::Top3);
        let t = witness_tensor();
        let a = apply_pipeline(&pipeline, &t, RngKey::new(9)).unwrap();
        let b = apply_pipeline(&pipeline, &t, RngKey::new(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn validation_rejects_malformed_pipelines() {
        let op = best_brightness();
        let bad = Pipeline {
            mode: PipelineMode::Sequential,
            ops: vec![op.clone()],
            pool: None,
        };
        assert!(bad.validate().is_err());
        let bad = Pipeline {
            mode: PipelineMode::RandAugmentStar,
            ops: vec![op],
            pool: Some(Pool::Top2),
        };
        assert!(bad.validate().is_err());
        let bad = Pipeline {
            mode: PipelineMode::TrivialAugmentStar,
            ops: Vec::new(),
            pool: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mixup_must_stand_alone() {
        let mix = AugmentationSpec::new(AugKind::Mixup, 0.5).unwrap();
        assert!(Pipeline::single(mix.clone()).is_ok());
        assert!(Pipeline::sequential(mix, best_contrast()).is_err());
    }

    #[test]
    fn batch_mixup_mixes_labels() {
        let mix = Pipeline::single(AugmentationSpec::new(AugKind::Mixup, 0.5).unwrap()).unwrap();
        let t = witness_tensor();
        let mut batch: Vec<mixup::LabeledExample> = (0..4)
            .map(|i| {
                let mut label = vec![0.0f32; 4];
                label[i] = 1.0;
                (t.clone(), label)
            })
            .collect();
        augment_batch(&mix, &mut batch, RngKey::new(3)).unwrap();
        for (_, label) in &batch {
            let sum: f32 = label.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn json_round_trip() {
        let pipeline = Pipeline::sequential(best_brightness(), best_posterize()).unwrap();
        let json = serde_json::to_string(&pipeline).unwrap();
        let back: Pipeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pipeline);

        let ra = Pipeline::rand_augment_star(Pool::Top2);
        let json = serde_json::to_string(&ra).unwrap();
        assert!(json.contains("\"pool\":\"top2\""));
        let back: Pipeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ra);
    }

    #[test]
    fn best_settings_match_study_values() {
        assert_eq!(best_brightness().v, 1.0);
        assert_eq!(best_brightness().variant, Variant::Channel2);
        assert_eq!(best_contrast().v, 5.0);
        assert_eq!(best_posterize().v, 1.0);
        assert_eq!(best_posterize().v2, Some(8.0));
        assert_eq!(best_posterize().variant, Variant::Channel);
        assert_eq!(Pool::Top2.ops().len(), 2);
        assert_eq!(Pool::Top3.ops().len(), 3);
    }
}
