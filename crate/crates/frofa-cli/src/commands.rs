//! Command implementations.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use frofa::feature_store::{
    generate_synthetic, import_npy, read_cache, write_cache, FeatureCache, Layout, SynthConfig,
};
use frofa::linear_probe;
use frofa::map_head;
use frofa::trainer::{
    self, mean_and_stderr, pooled_features, ExperimentData, LabeledSet, ShotSummary, SweepGrid,
    SweepOptions,
};

use crate::manifest::ExperimentManifest;
use crate::{output, EvalArgs, ImportArgs, ProbeArgs, SweepArgs, SynthArgs, TrainArgs, UsageError};

pub fn cache_synth(args: SynthArgs) -> Result<()> {
    let cache = generate_synthetic(&SynthConfig {
        num_classes: args.classes,
        per_class: args.per_class,
        tokens: args.n,
        channels: args.c,
        cluster_scale: args.cluster_scale,
        noise_scale: args.noise_scale,
        seed: args.seed,
    })?;
    write_cache(&cache.manifest, &cache.labels, &cache.features, &args.out)?;
    println!(
        "wrote {} (E={}, N={}, C={}, S={})",
        args.out.display(),
        cache.manifest.num_examples,
        cache.manifest.n,
        cache.manifest.c,
        cache.manifest.num_classes
    );
    Ok(())
}

pub fn cache_import(args: ImportArgs) -> Result<()> {
    let layout = match args.layout.as_str() {
        "token_grid" => Layout::TokenGrid,
        "pooled" => Layout::Pooled,
        other => return Err(UsageError(format!("unknown layout {other:?}")).into()),
    };
    let mut cache = import_npy(&args.features, &args.labels, layout)?;
    if let Some(split) = args.split_name {
        cache.manifest.split_name = split;
    }
    if let Some(source) = args.source {
        cache.manifest.source = source;
    }
    write_cache(&cache.manifest, &cache.labels, &cache.features, &args.out)?;
    println!(
        "imported {} examples into {} (N={}, C={}, S={})",
        cache.manifest.num_examples,
        args.out.display(),
        cache.manifest.n,
        cache.manifest.c,
        cache.manifest.num_classes
    );
    Ok(())
}

pub fn cache_info(path: &Path) -> Result<()> {
    let cache = read_cache(path)?;
    let m = &cache.manifest;
    println!("path: {}", path.display());
    println!("version: {}", m.version);
    println!(
        "layout: {}",
        match m.layout {
            Layout::TokenGrid => "token_grid",
            Layout::Pooled => "pooled",
        }
    );
    println!("E={} N={} C={} S={}", m.num_examples, m.n, m.c, m.num_classes);
    if !m.split_name.is_empty() {
        println!("split: {}", m.split_name);
    }
    if !m.source.is_empty() {
        println!("source: {}", m.source);
    }
    Ok(())
}

fn load_experiment_data(manifest: &ExperimentManifest) -> Result<ExperimentData> {
    let train_cache = read_cache(&manifest.train_cache)
        .with_context(|| format!("reading cache {}", manifest.train_cache.display()))?;
    let val_cache = manifest
        .val_cache
        .as_ref()
        .map(|p| read_cache(p).with_context(|| format!("reading cache {}", p.display())))
        .transpose()?;
    let test_cache = manifest
        .test_cache
        .as_ref()
        .map(|p| read_cache(p).with_context(|| format!("reading cache {}", p.display())))
        .transpose()?;
    let mut data = ExperimentData::carved(train_cache);
    data.val_cache = val_cache;
    data.test_cache = test_cache;
    Ok(data)
}

fn run_and_persist(
    manifest: &ExperimentManifest,
    command: &str,
    extras: serde_json::Value,
    options: SweepOptions,
) -> Result<()> {
    let data = load_experiment_data(manifest)?;
    let hash = manifest.config_hash(command, &extras);
    let out_dir = manifest.out_dir();
    let outcome = trainer::run_sweep(&data, &options)?;
    manifest.write_echo(&out_dir, command, &hash)?;
    output::write_metrics_jsonl(&out_dir, &hash, &outcome.records)?;
    output::write_summary_csv(&out_dir, &hash, &outcome.records)?;
    output::write_shot_summaries(&out_dir, &hash, &outcome.summaries)?;
    println!("config_hash={hash}");
    output::print_summaries(&outcome.summaries);
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let manifest = ExperimentManifest::resolve(&args.experiment)?;
    let extras = serde_json::json!({
        "batch_size": args.batch_size,
        "lr": args.lr,
        "steps": args.steps,
        "weight_decay": args.weight_decay,
        "warmup": args.warmup,
        "eval_every": args.eval_every,
    });
    let data = load_experiment_data(&manifest)?;
    let hash = manifest.config_hash("train", &extras);
    let out_dir = manifest.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let pipeline_id = manifest
        .pipeline
        .as_ref()
        .map(|p| p.id())
        .unwrap_or_else(|| "none".into());
    let non_paper = manifest
        .pipeline
        .as_ref()
        .map(|p| !p.paper_evaluated())
        .unwrap_or(false);

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &shot in &manifest.shots {
        let mut replica_scores = Vec::new();
        for &seed in &manifest.seeds {
            let started = Instant::now();
            let run = data.shot_run(shot, seed, manifest.seed)?;
            let train_seed = frofa::rng::RngKey::new(manifest.seed)
                .child_str("train")
                .child(shot as u64)
                .child(seed)
                .child(0)
                .value();
            let mut config = trainer::TrainConfig::new(args.batch_size, args.lr, args.steps, train_seed);
            config.weight_decay = args.weight_decay;
            config.pipeline = manifest.pipeline.clone();
            config.eval_every = args.eval_every;
            if let Some(warmup) = args.warmup {
                config.warmup_steps = warmup;
            }
            let (best_params, metrics) = trainer::train(&config, &run.train, &run.val)?;
            let test_top1 = trainer::evaluate_top1(&best_params, &run.test);
            map_head::save_checkpoint(
                &best_params,
                &out_dir.join(format!("head_{hash}_shot{shot}_seed{seed}.ckpt")),
            )?;
            replica_scores.push(test_top1);
            records.push(trainer::ConfigRecord {
                shot,
                seed,
                batch_size: args.batch_size,
                lr: args.lr,
                steps: args.steps,
                weight_decay: args.weight_decay,
                pipeline_id: pipeline_id.clone(),
                non_paper_variant: non_paper,
                val_top1: metrics.best_val_top1,
                test_top1,
                best_step: metrics.best_step,
                selected: true,
                wall_s: started.elapsed().as_secs_f64(),
            });
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
    manifest.write_echo(&out_dir, "train", &hash)?;
    output::write_metrics_jsonl(&out_dir, &hash, &records)?;
    output::write_summary_csv(&out_dir, &hash, &records)?;
    output::write_shot_summaries(&out_dir, &hash, &summaries)?;
    println!("config_hash={hash}");
    output::print_summaries(&summaries);
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let mut manifest = ExperimentManifest::resolve(&args.experiment)?;
    if let Some(grid) = &args.grid {
        manifest.grid = grid.clone();
    }
    if let Some(axis) = &args.weight_decay_axis {
        manifest.weight_decay_axis = match axis.as_str() {
            "on" => true,
            "off" => false,
            other => return Err(UsageError(format!("weight-decay-axis must be on|off, got {other}")).into()),
        };
    }
    let mut grid = match manifest.grid.as_str() {
        "full" => SweepGrid::full(),
        "reduced" => SweepGrid::reduced(),
        other => return Err(UsageError(format!("grid must be full|reduced, got {other}")).into()),
    };
    if manifest.weight_decay_axis {
        grid = grid.with_decay_axis();
    }
    let extras = serde_json::json!({
        "warmup": args.warmup,
        "eval_every": args.eval_every,
    });
    let options = SweepOptions {
        grid,
        pipeline: manifest.pipeline.clone(),
        shots: manifest.shots.clone(),
        replica_seeds: manifest.seeds.clone(),
        experiment_seed: manifest.seed,
        heads: None,
        workers: manifest.workers(),
        eval_every: args.eval_every,
        warmup_steps: args.warmup,
    };
    run_and_persist(&manifest, "sweep", extras, options)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbeRecord {
    shot: usize,
    seed: u64,
    lambda: f64,
    train_top1: f64,
    val_top1: f64,
    test_top1: f64,
    #[serde(skip)]
    wall_s: f64,
}

pub fn probe(args: ProbeArgs) -> Result<()> {
    let manifest = ExperimentManifest::resolve(&args.experiment)?;
    let data = load_experiment_data(&manifest)?;
    let extras = serde_json::json!({ "bias": !args.no_bias });
    let hash = manifest.config_hash("probe", &extras);
    let out_dir = manifest.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let with_bias = !args.no_bias;

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &shot in &manifest.shots {
        let mut replica_scores = Vec::new();
        for &seed in &manifest.seeds {
            let started = Instant::now();
            let run = data.shot_run(shot, seed, manifest.seed)?;
            let classes = run.train.classes;
            let features = run.train.examples[0].channels();
            let x_train = pooled_features(&run.train);
            let y_train = linear_probe::one_hot_targets(&run.train.labels, classes);
            let x_val = pooled_features(&run.val);
            let x_test = pooled_features(&run.test);

            let (solution, val_top1) = linear_probe::sweep_lambda(
                &x_train,
                &y_train,
                run.train.len(),
                features,
                classes,
                &x_val,
                &run.val.labels,
                with_bias,
            )?;
            let train_top1 = linear_probe::accuracy_on(&solution, &x_train, &run.train.labels);
            let test_top1 = linear_probe::accuracy_on(&solution, &x_test, &run.test.labels);
            linear_probe::save_probe(
                &solution,
                &out_dir.join(format!("probe_{hash}_shot{shot}_seed{seed}.ckpt")),
            )?;
            replica_scores.push(test_top1);
            records.push(ProbeRecord {
                shot,
                seed,
                lambda: solution.lambda,
                train_top1,
                val_top1,
                test_top1,
                wall_s: started.elapsed().as_secs_f64(),
            });
        }
        let (mean, stderr) = mean_and_stderr(&replica_scores);
        summaries.push(ShotSummary {
            shot,
            pipeline_id: "linear_probe".into(),
            replica_test_top1: replica_scores,
            mean_test_top1: mean,
            stderr_test_top1: stderr,
        });
    }

    std::fs::create_dir_all(&out_dir)?;
    manifest.write_echo(&out_dir, "probe", &hash)?;
    let mut lines = String::new();
    for record in &records {
        let mut object = serde_json::to_value(record)?;
        object
            .as_object_mut()
            .unwrap()
            .insert("config_hash".into(), serde_json::Value::String(hash.clone()));
        lines.push_str(&serde_json::to_string(&object)?);
        lines.push('\n');
    }
    std::fs::write(out_dir.join(format!("probe_metrics_{hash}.jsonl")), lines)?;
    let mut csv = String::from("shot,seed,lambda,train_top1,val_top1,test_top1,wall_s\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.3}\n",
            r.shot, r.seed, r.lambda, r.train_top1, r.val_top1, r.test_top1, r.wall_s
        ));
    }
    std::fs::write(out_dir.join(format!("probe_summary_{hash}.csv")), csv)?;
    output::write_shot_summaries(&out_dir, &hash, &summaries)?;
    println!("config_hash={hash}");
    output::print_summaries(&summaries);
    Ok(())
}

fn whole_cache_set(cache: &FeatureCache) -> LabeledSet {
    LabeledSet::from_cache(cache, &(0..cache.len()).collect::<Vec<_>>())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cache = read_cache(&args.cache)?;
    let set = whole_cache_set(&cache);
    let top1 = match args.kind.as_str() {
        "head" => {
            let params = map_head::load_checkpoint(&args.checkpoint)?;
            trainer::evaluate_top1(&params, &set)
        }
        "probe" => {
            let solution = linear_probe::load_probe(&args.checkpoint)?;
            let x = pooled_features(&set);
            linear_probe::accuracy_on(&solution, &x, &set.labels)
        }
        other => return Err(UsageError(format!("kind must be head|probe, got {other}")).into()),
    };
    println!("test_top1={top1:.4}");
    if let Some(out) = args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let body = serde_json::json!({
            "cache": args.cache,
            "checkpoint": args.checkpoint,
            "kind": args.kind,
            "top1": top1,
        });
        std::fs::write(out, serde_json::to_string_pretty(&body)?)?;
    }
    Ok(())
}
