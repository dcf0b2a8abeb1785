//! Experiment manifests: the resolved, hashable description of a run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use frofa::protocols::Pipeline;

use crate::{ExperimentArgs, UsageError};

/// Everything that determines a run's outputs. `out_dir` and `workers` are
/// carried alongside but excluded from the config hash, so runs that differ
/// only in where they write or how parallel they are produce identical
/// artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub train_cache: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_cache: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_cache: Option<PathBuf>,
    /// Resolved pipeline (inlined from the pipeline JSON file), or none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<Pipeline>,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid: String,
    #[serde(default)]
    pub weight_decay_axis: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_shots() -> Vec<usize> {
    vec![1, 5, 10, 25]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_grid() -> String {
    "full".into()
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            train_cache: PathBuf::new(),
            val_cache: None,
            test_cache: None,
            pipeline: None,
            shots: default_shots(),
            seeds: default_seeds(),
            seed: 0,
            grid: default_grid(),
            weight_decay_axis: false,
            out_dir: None,
            workers: None,
        }
    }
}

pub fn parse_shots(text: &str) -> Result<Vec<usize>> {
    let shots: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("bad shots list {text:?}")))?;
    if shots.is_empty() || shots.contains(&0) {
        return Err(UsageError(format!("shots must be positive: {text:?}")).into());
    }
    Ok(shots)
}

/// `0..4` (inclusive range) or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| UsageError(format!("bad seed range {text:?}")))?;
        let hi: u64 = hi.trim().parse().map_err(|_| UsageError(format!("bad seed range {text:?}")))?;
        if hi < lo {
            return Err(UsageError(format!("empty seed range {text:?}")).into());
        }
        return Ok((lo..=hi).collect());
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("bad seeds list {text:?}")))?;
    Ok(seeds)
}

pub fn load_pipeline_arg(value: &str) -> Result<Option<Pipeline>> {
    if value == "none" {
        return Ok(None);
    }
    let text = std::fs::read_to_string(value)
        .with_context(|| format!("reading pipeline file {value}"))?;
    let pipeline: Pipeline =
        serde_json::from_str(&text).with_context(|| format!("parsing pipeline {value}"))?;
    pipeline.validate()?;
    Ok(Some(pipeline))
}

impl ExperimentManifest {
    /// Loads `--manifest` (when given) and overlays any explicit flags.
    pub fn resolve(args: &ExperimentArgs) -> Result<Self> {
        let mut manifest = match &args.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading manifest {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing manifest {}", path.display()))?
            }
            None => ExperimentManifest::default(),
        };
        if let Some(cache) = &args.cache {
            manifest.train_cache = cache.clone();
        }
        if let Some(val) = &args.val_cache {
            manifest.val_cache = Some(val.clone());
        }
        if let Some(test) = &args.test_cache {
            manifest.test_cache = Some(test.clone());
        }
        if let Some(shots) = &args.shots {
            manifest.shots = parse_shots(shots)?;
        }
        if let Some(seeds) = &args.seeds {
            manifest.seeds = parse_seeds(seeds)?;
        }
        if let Some(pipeline) = &args.pipeline {
            manifest.pipeline = load_pipeline_arg(pipeline)?;
        }
        if let Some(out) = &args.out {
            manifest.out_dir = Some(out.clone());
        }
        if let Some(workers) = args.workers {
            manifest.workers = Some(workers);
        }
        if let Some(seed) = args.seed {
            manifest.seed = seed;
        }
        manifest.check_files()?;
        Ok(manifest)
    }

    fn check_files(&self) -> Result<()> {
        if self.train_cache.as_os_str().is_empty() {
            return Err(UsageError("no training cache given (--cache)".into()).into());
        }
        for path in [Some(&self.train_cache), self.val_cache.as_ref(), self.test_cache.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(UsageError(format!("cache {} does not exist", path.display())).into());
            }
        }
        Ok(())
    }

    /// Output directory: flag/manifest value, else $FROFA_OUT, else
    /// `frofa_out`.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("FROFA_OUT") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from("frofa_out")
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    /// Content hash over the semantic fields (everything except `out_dir`
    /// and `workers`), plus command-specific extras the caller appends.
    pub fn config_hash(&self, command: &str, extras: &serde_json::Value) -> String {
        let mut semantic = self.clone();
        semantic.out_dir = None;
        semantic.workers = None;
        let blob = serde_json::json!({
            "command": command,
            "manifest": semantic,
            "extras": extras,
        });
        let digest = Sha256::digest(serde_json::to_string(&blob).expect("serializable").as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Echo of the resolved manifest written beside the metrics.
    pub fn write_echo(&self, dir: &Path, command: &str, hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let echo = serde_json::json!({
            "command": command,
            "config_hash": hash,
            "manifest": self,
            "pipeline_paper_evaluated": self.pipeline.as_ref().map(|p| p.paper_evaluated()),
        });
        let path = dir.join(format!("manifest_{hash}.json"));
        std::fs::write(path, serde_json::to_string_pretty(&echo)?)?;
        Ok(())
    }
}
