//! Transfer training on cached features: SGD with momentum under a cosine
//! schedule with linear warmup, global-norm gradient clipping, decoupled
//! weight decay, per-step feature augmentation, validation-based early
//! stopping, and the Cartesian hyperparameter sweep runner.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentations::mixup::LabeledExample;
use crate::error::{Error, Result};
use crate::feature_store::{
    sample_few_shot_within, split_train_val_test, FeatureCache, FeatureTensor,
};
use crate::map_head::{self, MapHeadParams};
use crate::protocols::{augment_batch, Pipeline};
use crate::rng::RngKey;

pub const DEFAULT_MOMENTUM: f32 = 0.9;
pub const DEFAULT_WARMUP_STEPS: usize = 500;
pub const DEFAULT_CLIP_NORM: f32 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub momentum: f32,
    pub warmup_steps: usize,
    pub clip_norm: f32,
    pub seed: u64,
    pub pipeline: Option<Pipeline>,
    /// Validation cadence; defaults to `max(100, total_steps / 20)`.
    pub eval_every: Option<usize>,
    /// Attention heads; defaults to `max(1, C / 64)`.
    pub heads: Option<usize>,
}

impl TrainConfig {
    pub fn new(batch_size: usize, base_lr: f64, total_steps: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size,
            base_lr,
            total_steps,
            weight_decay: 0.0,
            momentum: DEFAULT_MOMENTUM,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            clip_norm: DEFAULT_CLIP_NORM,
            seed,
            pipeline: None,
            eval_every: None,
            heads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.total_steps <= self.warmup_steps {
            return Err(Error::InvalidConfig(format!(
                "total_steps {} must exceed warmup_steps {}",
                self.total_steps, self.warmup_steps
            )));
        }
        if let Some(pipeline) = &self.pipeline {
            pipeline.validate()?;
        }
        Ok(())
    }

    pub fn eval_cadence(&self) -> usize {
        self.eval_every
            .unwrap_or_else(|| (self.total_steps / 20).max(100))
            .max(1)
    }

    pub fn pipeline_id(&self) -> String {
        self.pipeline
            .as_ref()
            .map(|p| p.id())
            .unwrap_or_else(|| "none".into())
    }
}

/// Linear warmup into a cosine decay to zero.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    debug_assert!(step <= config.total_steps);
    let warmup = config.warmup_steps;
    if step < warmup {
        return config.base_lr * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (config.total_steps - warmup) as f64;
    0.5 * config.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns
/// the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f32], max_norm: f32) -> f32 {
    let norm = grads.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Momentum buffer plus the decay mask; one per training run.
pub struct Optimizer {
    momentum: Vec<f32>,
    decay_mask: Vec<bool>,
}

impl Optimizer {
    pub fn new(params: &MapHeadParams) -> Self {
        Optimizer {
            momentum: vec![0.0; params.data.len()],
            decay_mask: params.shape.decay_mask(),
        }
    }
}

/// One optimizer step on an already-augmented batch:
/// clip(grad) -> momentum -> parameter update with decoupled weight decay
/// (biases and the layer-norm offset are not decayed).
pub fn train_step(
    params: &mut MapHeadParams,
    optimizer: &mut Optimizer,
    examples: &[&FeatureTensor],
    labels: &[&[f32]],
    config: &TrainConfig,
    step: usize,
) -> Result<f32> {
    let (loss, mut grads) = map_head::backward(params, examples, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss });
    }
    clip_global_norm(&mut grads, config.clip_norm);
    let lr = lr_at(step, config) as f32;
    let decay = config.weight_decay as f32;
    for i in 0..params.data.len() {
        optimizer.momentum[i] = config.momentum * optimizer.momentum[i] + grads[i];
        let mut update = lr * optimizer.momentum[i];
        if decay != 0.0 && optimizer.decay_mask[i] {
            update += lr * decay * params.data[i];
        }
        params.data[i] -= update;
    }
    Ok(loss)
}

/// An in-memory labeled split.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub examples: Vec<FeatureTensor>,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn from_cache(cache: &FeatureCache, indices: &[usize]) -> Self {
        LabeledSet {
            examples: indices.iter().map(|&i| cache.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| cache.labels[i]).collect(),
            classes: cache.num_classes() as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn one_hot(&self, label: u32) -> Vec<f32> {
        let mut y = vec![0.0f32; self.classes];
        y[label as usize] = 1.0;
        y
    }

    /// One one-hot row per class, for borrow-only batch assembly.
    fn one_hot_table(&self) -> Vec<Vec<f32>> {
        (0..self.classes as u32).map(|s| self.one_hot(s)).collect()
    }
}

/// Replacement-free shuffled epochs; batches wrap the dataset, reshuffling
/// with a fresh child key at each epoch boundary.
struct EpochCursor {
    order: Vec<usize>,
    position: usize,
    epoch: u64,
    key: RngKey,
}

impl EpochCursor {
    fn new(len: usize, key: RngKey) -> Self {
        let mut cursor = EpochCursor {
            order: (0..len).collect(),
            position: 0,
            epoch: 0,
            key,
        };
        cursor.reshuffle();
        cursor
    }

    fn reshuffle(&mut self) {
        self.key.child(self.epoch).stream().shuffle(&mut self.order);
        self.position = 0;
    }

    fn next_batch(&mut self, size: usize, out: &mut Vec<usize>) {
        out.clear();
        while out.len() < size {
            if self.position == self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.position]);
            self.position += 1;
        }
    }
}

/// Per-run training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    /// (step, validation top-1) at each evaluation, final step included.
    pub val_curve: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_val_top1: f64,
    pub final_val_top1: f64,
    pub train_loss_final: f32,
}

/// Trains a fresh head and returns the parameters of the best validation
/// step (ties to the earliest).
pub fn train(
    config: &TrainConfig,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
) -> Result<(MapHeadParams, Metrics)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig("train and val sets must be non-empty".into()));
    }
    let channels = train_set.examples[0].channels();
    let heads = config
        .heads
        .unwrap_or_else(|| map_head::default_head_count(channels));
    let root = RngKey::new(config.seed);
    let mut params = map_head::init(channels, train_set.classes, heads, root.child_str("init").value())?;
    let mut optimizer = Optimizer::new(&params);

    let epoch_key = root.child_str("epochs");
    let aug_key = root.child_str("aug");
    let mut cursor = EpochCursor::new(train_set.len(), epoch_key);
    let eval_every = config.eval_cadence();

    let mut metrics = Metrics {
        val_curve: Vec::new(),
        best_step: 0,
        best_val_top1: f64::NEG_INFINITY,
        final_val_top1: 0.0,
        train_loss_final: 0.0,
    };
    let mut best_params = params.clone();
    let mut batch_indices = Vec::with_capacity(config.batch_size);
    let mut last_loss = 0.0f32;
    let one_hot_table = train_set.one_hot_table();
    let mut example_refs: Vec<&FeatureTensor> = Vec::with_capacity(config.batch_size);
    let mut label_refs: Vec<&[f32]> = Vec::with_capacity(config.batch_size);

    let record_eval = |step: usize,
                           params: &MapHeadParams,
                           metrics: &mut Metrics,
                           best_params: &mut MapHeadParams| {
        let top1 = evaluate_top1(params, val_set);
        metrics.val_curve.push((step, top1));
        if top1 > metrics.best_val_top1 {
            metrics.best_val_top1 = top1;
            metrics.best_step = step;
            *best_params = params.clone();
        }
    };

    for step in 0..config.total_steps {
        cursor.next_batch(config.batch_size, &mut batch_indices);
        last_loss = if let Some(pipeline) = &config.pipeline {
            let mut batch: Vec<LabeledExample> = batch_indices
                .iter()
                .map(|&i| (train_set.examples[i].clone(), train_set.one_hot(train_set.labels[i])))
                .collect();
            augment_batch(pipeline, &mut batch, aug_key.child(step as u64))?;
            let refs: Vec<&FeatureTensor> = batch.iter().map(|(t, _)| t).collect();
            let labels: Vec<&[f32]> = batch.iter().map(|(_, y)| y.as_slice()).collect();
            train_step(&mut params, &mut optimizer, &refs, &labels, config, step)?
        } else {
            example_refs.clear();
            label_refs.clear();
            for &i in &batch_indices {
                example_refs.push(&train_set.examples[i]);
                label_refs.push(one_hot_table[train_set.labels[i] as usize].as_slice());
            }
            train_step(&mut params, &mut optimizer, &example_refs, &label_refs, config, step)?
        };
        let completed = step + 1;
        if completed % eval_every == 0 && completed != config.total_steps {
            record_eval(completed, &params, &mut metrics, &mut best_params);
        }
    }
    // the final step is always evaluated; when the cadence lands on it this
    // is the coinciding second evaluation
    if config.total_steps % eval_every == 0 {
        record_eval(config.total_steps, &params, &mut metrics, &mut best_params);
    }
    record_eval(config.total_steps, &params, &mut metrics, &mut best_params);

    metrics.final_val_top1 = metrics.val_curve.last().map(|&(_, a)| a).unwrap_or(0.0);
    metrics.train_loss_final = last_loss;
    Ok((best_params, metrics))
}

/// Fraction of examples whose argmax logit matches the label; ties break
/// toward the smallest class index. No augmentation at evaluation time.
pub fn evaluate_top1(params: &MapHeadParams, set: &LabeledSet) -> f64 {
    debug_assert!(!set.is_empty());
    let mut hits = 0usize;
    for (tokens, &label) in set.examples.iter().zip(&set.labels) {
        let out = map_head::forward(params, &[tokens]).expect("shapes fixed by the set");
        if argmax(&out.logits[0]) == label as usize {
            hits += 1;
        }
    }
    hits as f64 / set.len() as f64
}

pub(crate) fn argmax(scores: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Mean-pools each example's tokens into a single vector, giving the
/// `E x C` row-major block the linear probe consumes. Pooled caches
/// (N = 1) pass through unchanged.
pub fn pooled_features(set: &LabeledSet) -> Vec<f32> {
    let mut out = Vec::new();
    for tokens in &set.examples {
        let n = tokens.tokens();
        let c = tokens.channels();
        let mut pooled = vec![0.0f64; c];
        for row in 0..n {
            for (acc, &v) in pooled.iter_mut().zip(tokens.token(row)) {
                *acc += v as f64;
            }
        }
        out.extend(pooled.iter().map(|&v| (v / n as f64) as f32));
    }
    out
}

/// The Cartesian hyperparameter grid. An empty decay axis means the single
/// value 0.0 (axis off).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub step_counts: Vec<usize>,
    pub weight_decays: Vec<f64>,
}

impl SweepGrid {
    /// 5 batch sizes x 4 learning rates x 5 step counts = 100 configs.
    pub fn full() -> Self {
        SweepGrid {
            batch_sizes: vec![32, 64, 128, 256, 512],
            learning_rates: vec![0.01, 0.03, 0.06, 0.1],
            step_counts: vec![1000, 2000, 4000, 8000, 16000],
            weight_decays: Vec::new(),
        }
    }

    /// The 8-config smoke grid: 2 x 2 x 2.
    pub fn reduced() -> Self {
        SweepGrid {
            batch_sizes: vec![32, 512],
            learning_rates: vec![0.01, 0.03],
            step_counts: vec![1000, 16000],
            weight_decays: Vec::new(),
        }
    }

    /// Adds the 4-value weight-decay axis (the `wd` superscript setting).
    pub fn with_decay_axis(mut self) -> Self {
        self.weight_decays = vec![0.01, 0.001, 0.0001, 0.0];
        self
    }

    /// Configs in canonical order: batch, then lr, then steps, then decay.
    pub fn configs(&self) -> Vec<GridPoint> {
        let decays: &[f64] = if self.weight_decays.is_empty() {
            &[0.0]
        } else {
            &self.weight_decays
        };
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &lr in &self.learning_rates {
                for &steps in &self.step_counts {
                    for &decay in decays {
                        out.push(GridPoint {
                            batch_size,
                            base_lr: lr,
                            total_steps: steps,
                            weight_decay: decay,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub batch_size: usize,
    pub base_lr: f64,
    pub total_steps: usize,
    pub weight_decay: f64,
}

/// Source data for an experiment. When explicit validation/test caches are
/// absent, disjoint per-class portions are carved from the training cache
/// (keyed by `split_seed` only, so all shot replicas share them).
pub struct ExperimentData {
    pub train_cache: FeatureCache,
    pub val_cache: Option<FeatureCache>,
    pub test_cache: Option<FeatureCache>,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl ExperimentData {
    pub fn carved(train_cache: FeatureCache) -> Self {
        ExperimentData {
            train_cache,
            val_cache: None,
            test_cache: None,
            val_fraction: 0.25,
            test_fraction: 0.25,
        }
    }

    /// Builds the train/val/test sets for one shot replica.
    pub fn shot_run(&self, k: usize, replica_seed: u64, split_seed: u64) -> Result<ShotRun> {
        let (train_pool, val_set, test_set) = match (&self.val_cache, &self.test_cache) {
            (Some(val), Some(test)) => {
                let all: Vec<usize> = (0..self.train_cache.len()).collect();
                (
                    all,
                    LabeledSet::from_cache(val, &(0..val.len()).collect::<Vec<_>>()),
                    LabeledSet::from_cache(test, &(0..test.len()).collect::<Vec<_>>()),
                )
            }
            _ => {
                let split = split_train_val_test(
                    &self.train_cache,
                    self.val_fraction,
                    self.test_fraction,
                    split_seed,
                )?;
                let val = match &self.val_cache {
                    Some(explicit) => {
                        LabeledSet::from_cache(explicit, &(0..explicit.len()).collect::<Vec<_>>())
                    }
                    None => LabeledSet::from_cache(&self.train_cache, &split.val),
                };
                let test = match &self.test_cache {
                    Some(explicit) => {
                        LabeledSet::from_cache(explicit, &(0..explicit.len()).collect::<Vec<_>>())
                    }
                    None => LabeledSet::from_cache(&self.train_cache, &split.test),
                };
                (split.train_pool, val, test)
            }
        };
        let sample = sample_few_shot_within(&self.train_cache, &train_pool, k, replica_seed)?;
        let train = LabeledSet::from_cache(&self.train_cache, &sample.indices);
        Ok(ShotRun {
            train,
            val: val_set,
            test: test_set,
        })
    }
}

pub struct ShotRun {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOptions {
    pub grid: SweepGrid,
    pub pipeline: Option<Pipeline>,
    pub shots: Vec<usize>,
    pub replica_seeds: Vec<u64>,
    /// Keys the val/test carve and the per-job training seeds.
    pub experiment_seed: u64,
    pub heads: Option<usize>,
    pub workers: usize,
    pub eval_every: Option<usize>,
    /// Warmup override; defaults to 500 steps.
    pub warmup_steps: Option<usize>,
}

/// One (config, replica) result. `wall_s` is measured time and is excluded
/// from the deterministic JSONL metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub shot: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub weight_decay: f64,
    pub pipeline_id: String,
    pub non_paper_variant: bool,
    pub val_top1: f64,
    pub test_top1: f64,
    pub best_step: usize,
    pub selected: bool,
    #[serde(skip)]
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shot: usize,
    pub pipeline_id: String,
    pub replica_test_top1: Vec<f64>,
    pub mean_test_top1: f64,
    pub stderr_test_top1: f64,
}

impl ShotSummary {
    pub fn print_line(&self) -> String {
        format!(
            "shot={} mean_top1={:.3} ± {:.3}",
            self.shot, self.mean_test_top1, self.stderr_test_top1
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<ConfigRecord>,
    pub summaries: Vec<ShotSummary>,
}

/// Mean and standard error (sample standard deviation over sqrt n).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains every grid config for every (shot, replica), selects per replica
/// by validation top-1 (ties to the earliest config in grid order), and
/// summarizes the selected test top-1 over replicas. Deterministic in
/// (data, options) for any worker count: jobs are keyed independently and
/// merged in job order.
pub fn run_sweep(data: &ExperimentData, options: &SweepOptions) -> Result<SweepOutcome> {
    let configs = options.grid.configs();
    if configs.is_empty() || options.shots.is_empty() || options.replica_seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one config, shot, and replica seed".into(),
        ));
    }
    let pipeline_id = options
        .pipeline
        .as_ref()
        .map(|p| p.id())
        .unwrap_or_else(|| "none".into());
    let non_paper = options
        .pipeline
        .as_ref()
        .map(|p| !p.paper_evaluated())
        .unwrap_or(false);

    struct Job {
        shot: usize,
        replica_seed: u64,
        config_index: usize,
        point: GridPoint,
    }
    let mut jobs = Vec::new();
    for &shot in &options.shots {
        for &replica_seed in &options.replica_seeds {
            for (config_index, &point) in configs.iter().enumerate() {
                jobs.push(Job {
                    shot,
                    replica_seed,
                    config_index,
                    point,
                });
            }
        }
    }

    let run_job = |job: &Job| -> Result<ConfigRecord> {
        let started = Instant::now();
        let shot_run = data.shot_run(job.shot, job.replica_seed, options.experiment_seed)?;
        let train_seed = RngKey::new(options.experiment_seed)
            .child_str("train")
            .child(job.shot as u64)
            .child(job.replica_seed)
            .child(job.config_index as u64)
            .value();
        let config = TrainConfig {
            batch_size: job.point.batch_size,
            base_lr: job.point.base_lr,
            total_steps: job.point.total_steps,
            weight_decay: job.point.weight_decay,
            momentum: DEFAULT_MOMENTUM,
            warmup_steps: options.warmup_steps.unwrap_or(DEFAULT_WARMUP_STEPS),
            clip_norm: DEFAULT_CLIP_NORM,
            seed: train_seed,
            pipeline: options.pipeline.clone(),
            eval_every: options.eval_every,
            heads: options.heads,
        };
        let (best_params, metrics) = train(&config, &shot_run.train, &shot_run.val)?;
        let test_top1 = evaluate_top1(&best_params, &shot_run.test);
        Ok(ConfigRecord {
            shot: job.shot,
            seed: job.replica_seed,
            batch_size: job.point.batch_size,
            lr: job.point.base_lr,
            steps: job.point.total_steps,
            weight_decay: job.point.weight_decay,
            pipeline_id: pipeline_id.clone(),
            non_paper_variant: non_paper,
            val_top1: metrics.best_val_top1,
            test_top1,
            best_step: metrics.best_step,
            selected: false,
            wall_s: started.elapsed().as_secs_f64(),
        })
    };

    let workers = options.workers.max(1);
    let mut records: Vec<ConfigRecord> = if workers == 1 {
        jobs.iter().map(run_job).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_>>())?
    };

    // per (shot, replica): mark the config with the best validation top-1
    let per_replica = configs.len();
    let mut summaries = Vec::new();
    for (shot_index, &shot) in options.shots.iter().enumerate() {
        let mut replica_scores = Vec::new();
        for (replica_index, _) in options.replica_seeds.iter().enumerate() {
            let base = (shot_index * options.replica_seeds.len() + replica_index) * per_replica;
            let block = &mut records[base..base + per_replica];
            let mut best = 0usize;
            for (i, record) in block.iter().enumerate() {
                if record.val_top1 > block[best].val_top1 {
                    best = i;
                }
            }
            block[best].selected = true;
            replica_scores.push(block[best].test_top1);
        }
        let (mean, stderr) = mean_and_stderr(&replica_scores);
        summaries.push(ShotSummary {
            shot,
            pipeline_id: pipeline_id.clone(),
            replica_test_top1: replica_scores,
            mean_test_top1: mean,
            stderr_test_top1: stderr,
        });
    }
    Ok(SweepOutcome { records, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentations::{AugKind, AugmentationSpec};
    use crate::feature_store::{generate_synthetic, SynthConfig};

    fn tiny_cache() -> FeatureCache {
        generate_synthetic(&SynthConfig {
            num_classes: 3,
            per_class: 12,
            tokens: 4,
            channels: 4,
            cluster_scale: 2.0,
            noise_scale: 0.3,
            seed: 0,
        })
        .unwrap()
    }

    fn quick_config(seed: u64) -> TrainConfig {
        let mut config = TrainConfig::new(8, 0.05, 60, seed);
        config.warmup_steps = 10;
        config.eval_every = Some(20);
        config
    }

    #[test]
    fn schedule_endpoints() {
        let mut config = TrainConfig::new(32, 0.1, 1000, 0);
        config.warmup_steps = 500;
        assert_eq!(lr_at(0, &config), 0.0);
        assert!((lr_at(500, &config) - 0.1).abs() < 1e-15);
        assert!(lr_at(1000, &config).abs() < 1e-12);
        // linear during warmup
        assert!((lr_at(250, &config) - 0.05).abs() < 1e-15);
        // midpoint of the cosine
        assert!((lr_at(750, &config) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn clipping_scales_down_only() {
        let mut grads = vec![3.0f32, 4.0];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let clipped = (grads[0] * grads[0] + grads[1] * grads[1]).sqrt();
        assert!((clipped - 1.0).abs() < 1e-6);
        assert!((grads[0] - 0.6).abs() < 1e-6);

        let mut small = vec![0.1f32, 0.2];
        let before = small.clone();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, before);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 0, 7).unwrap();
        let config = quick_config(3);
        let (params_a, metrics_a) = train(&config, &run.train, &run.val).unwrap();
        let (params_b, metrics_b) = train(&config, &run.train, &run.val).unwrap();
        let bits = |p: &MapHeadParams| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&params_a), bits(&params_b));
        assert_eq!(metrics_a.val_curve, metrics_b.val_curve);
    }

    #[test]
    fn identity_pipeline_reproduces_no_pipeline_bit_for_bit() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 1, 7).unwrap();

        let bare = quick_config(5);
        let mut with_identity = quick_config(5);
        with_identity.pipeline = Some(
            Pipeline::single(AugmentationSpec::new(AugKind::Brightness, 0.0).unwrap()).unwrap(),
        );

        let (params_a, _) = train(&bare, &run.train, &run.val).unwrap();
        let (params_b, _) = train(&with_identity, &run.train, &run.val).unwrap();
        let bits = |p: &MapHeadParams| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&params_a), bits(&params_b));
    }

    #[test]
    fn separable_set_reaches_full_training_accuracy() {
        // widely separated clusters, 5-shot: the head must fit its 15
        // training examples perfectly
        let cache = generate_synthetic(&SynthConfig {
            num_classes: 3,
            per_class: 20,
            tokens: 4,
            channels: 8,
            cluster_scale: 4.0,
            noise_scale: 0.05,
            seed: 2,
        })
        .unwrap();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 0, 0).unwrap();
        let mut config = TrainConfig::new(15, 0.1, 300, 1);
        config.warmup_steps = 30;
        config.eval_every = Some(100);
        let (best, _) = train(&config, &run.train, &run.val).unwrap();
        let train_top1 = evaluate_top1(&best, &run.train);
        assert_eq!(train_top1, 1.0);
    }

    #[test]
    fn best_params_come_from_best_val_step() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 2, 7).unwrap();
        let config = quick_config(9);
        let (best, metrics) = train(&config, &run.train, &run.val).unwrap();
        let best_acc = evaluate_top1(&best, &run.val);
        assert!((best_acc - metrics.best_val_top1).abs() < 1e-12);
        // the tracked best dominates the whole curve
        for &(_, acc) in &metrics.val_curve {
            assert!(metrics.best_val_top1 >= acc);
        }
        // and the earliest step wins ties
        let earliest = metrics
            .val_curve
            .iter()
            .find(|&&(_, acc)| acc == metrics.best_val_top1)
            .unwrap()
            .0;
        assert_eq!(metrics.best_step, earliest);
    }

    #[test]
    fn eval_cadence_equal_to_total_steps_gives_two_coinciding_evals() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 0, 7).unwrap();
        let mut config = quick_config(1);
        config.total_steps = 40;
        config.warmup_steps = 10;
        config.eval_every = Some(40);
        let (_, metrics) = train(&config, &run.train, &run.val).unwrap();
        assert_eq!(metrics.val_curve.len(), 2);
        assert_eq!(metrics.val_curve[0].0, 40);
        assert_eq!(metrics.val_curve[1].0, 40);
        assert_eq!(metrics.val_curve[0].1, metrics.val_curve[1].1);
    }

    #[test]
    fn evaluate_matches_brute_force_loop() {
        let cache = tiny_cache();
        let set = LabeledSet::from_cache(&cache, &(0..cache.len()).collect::<Vec<_>>());
        let params = map_head::init(4, 3, 1, 5).unwrap();
        let fast = evaluate_top1(&params, &set);
        let mut hits = 0usize;
        for (tokens, &label) in set.examples.iter().zip(&set.labels) {
            let logits = map_head::forward(&params, &[tokens]).unwrap().logits[0].clone();
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            if best == label as usize {
                hits += 1;
            }
        }
        assert_eq!(fast, hits as f64 / set.len() as f64);
    }

    #[test]
    fn zero_logits_tie_break_to_class_zero() {
        let cache = tiny_cache();
        let mut set = LabeledSet::from_cache(&cache, &(0..6).collect::<Vec<_>>());
        set.labels = vec![0; 6];
        // fresh head outputs all-zero logits
        let params = map_head::init(4, 3, 1, 0).unwrap();
        assert_eq!(evaluate_top1(&params, &set), 1.0);
    }

    #[test]
    fn grid_counts() {
        assert_eq!(SweepGrid::full().configs().len(), 100);
        assert_eq!(SweepGrid::full().with_decay_axis().configs().len(), 400);
        assert_eq!(SweepGrid::reduced().configs().len(), 8);
    }

    fn smoke_sweep_options(workers: usize) -> SweepOptions {
        let grid = SweepGrid {
            batch_sizes: vec![4, 8],
            learning_rates: vec![0.03],
            step_counts: vec![40],
            weight_decays: Vec::new(),
        };
        SweepOptions {
            grid,
            pipeline: None,
            shots: vec![1, 5],
            replica_seeds: vec![0, 1],
            experiment_seed: 7,
            heads: None,
            workers,
            eval_every: Some(20),
            warmup_steps: Some(10),
        }
    }

    #[test]
    fn sweep_is_worker_count_independent() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let mut options = smoke_sweep_options(1);
        // warmup must stay below total steps
        options.grid.step_counts = vec![40];
        let serial = run_sweep(&data, &options).unwrap();
        options.workers = 4;
        let parallel = run_sweep(&data, &options).unwrap();
        assert_eq!(
            serde_json::to_string(&serial.records).unwrap(),
            serde_json::to_string(&parallel.records).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&serial.summaries).unwrap(),
            serde_json::to_string(&parallel.summaries).unwrap()
        );
    }

    #[test]
    fn sweep_selects_exactly_one_config_per_replica() {
        let cache = tiny_cache();
        let data = ExperimentData::carved(cache);
        let options = smoke_sweep_options(2);
        let outcome = run_sweep(&data, &options).unwrap();
        assert_eq!(outcome.records.len(), 2 * 2 * 2);
        for shot in [1usize, 5] {
            for seed in [0u64, 1] {
                let selected: Vec<_> = outcome
                    .records
                    .iter()
                    .filter(|r| r.shot == shot && r.seed == seed && r.selected)
                    .collect();
                assert_eq!(selected.len(), 1);
                let max_val = outcome
                    .records
                    .iter()
                    .filter(|r| r.shot == shot && r.seed == seed)
                    .map(|r| r.val_top1)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(selected[0].val_top1, max_val);
            }
        }
        assert_eq!(outcome.summaries.len(), 2);
        for summary in &outcome.summaries {
            assert_eq!(summary.replica_test_top1.len(), 2);
            let (mean, _) = mean_and_stderr(&summary.replica_test_top1);
            assert!((summary.mean_test_top1 - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn warmup_must_be_below_total_steps() {
        let config = TrainConfig::new(8, 0.1, 100, 0);
        // default warmup is 500 > 100
        assert!(config.validate().is_err());
    }

    #[test]
    fn loss_decreases_early_without_clipping_at_tiny_lr() {
        let cache = generate_synthetic(&SynthConfig {
            num_classes: 3,
            per_class: 20,
            tokens: 4,
            channels: 8,
            cluster_scale: 4.0,
            noise_scale: 0.05,
            seed: 4,
        })
        .unwrap();
        let data = ExperimentData::carved(cache);
        let run = data.shot_run(5, 0, 0).unwrap();
        let mut config = TrainConfig::new(15, 1e-3, 20, 2);
        config.warmup_steps = 1;
        config.clip_norm = f32::INFINITY;
        config.eval_every = Some(100);

        let channels = run.train.examples[0].channels();
        let mut params = map_head::init(channels, run.train.classes, 1, 0).unwrap();
        let mut optimizer = Optimizer::new(&params);
        let refs: Vec<&FeatureTensor> = run.train.examples.iter().collect();
        let labels: Vec<Vec<f32>> = run
            .train
            .labels
            .iter()
            .map(|&l| run.train.one_hot(l))
            .collect();
        let label_refs: Vec<&[f32]> = labels.iter().map(|l| l.as_slice()).collect();
        let mut previous = f32::INFINITY;
        for step in 1..=10 {
            let loss =
                train_step(&mut params, &mut optimizer, &refs, &label_refs, &config, step).unwrap();
            assert!(loss <= previous + 1e-6, "step {step}: {loss} > {previous}");
            previous = loss;
        }
    }
}
