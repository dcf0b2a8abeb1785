//! Metrics artifacts: deterministic JSONL, the summary CSV, and helpers.

use std::path::{Path, PathBuf};

use anyhow::Result;
use frofa::trainer::{ConfigRecord, ShotSummary};

pub const SUMMARY_CSV_HEADER: &str =
    "shot,seed,batch_size,lr,steps,weight_decay,pipeline_id,val_top1,test_top1,best_step,wall_s";

/// One JSON object per (config, replica), in job order. Wall-clock time is
/// deliberately absent: this file is byte-identical across reruns.
pub fn write_metrics_jsonl(
    dir: &Path,
    hash: &str,
    records: &[ConfigRecord],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for record in records {
        let mut object = serde_json::to_value(record)?;
        object
            .as_object_mut()
            .expect("record serializes to an object")
            .insert("config_hash".into(), serde_json::Value::String(hash.into()));
        lines.push_str(&serde_json::to_string(&object)?);
        lines.push('\n');
    }
    let path = dir.join(format!("metrics_{hash}.jsonl"));
    std::fs::write(&path, lines)?;
    Ok(path)
}

/// Per-(config, replica) rows including measured wall-clock seconds.
pub fn write_summary_csv(dir: &Path, hash: &str, records: &[ConfigRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::from(SUMMARY_CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{},{:.3}\n",
            r.shot,
            r.seed,
            r.batch_size,
            r.lr,
            r.steps,
            r.weight_decay,
            r.pipeline_id,
            r.val_top1,
            r.test_top1,
            r.best_step,
            r.wall_s
        ));
    }
    let path = dir.join(format!("summary_{hash}.csv"));
    std::fs::write(&path, text)?;
    Ok(path)
}

pub fn write_shot_summaries(dir: &Path, hash: &str, summaries: &[ShotSummary]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("shot_summary_{hash}.json"));
    let body = serde_json::json!({ "config_hash": hash, "shots": summaries });
    std::fs::write(&path, serde_json::to_string_pretty(&body)?)?;
    Ok(path)
}

pub fn print_summaries(summaries: &[ShotSummary]) {
    for summary in summaries {
        println!("{}", summary.print_line());
    }
}
