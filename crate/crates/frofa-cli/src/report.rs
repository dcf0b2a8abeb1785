//! Gain tables and charts from persisted summary CSVs.
//!
//! Each `summary_<hash>.csv` in the metrics directory is one run. Per run,
//! shot, and replica seed, the row with the best validation top-1 is the
//! selected config (first row wins ties, matching the sweep's selection);
//! the mean of the selected test top-1 over seeds is the run's score. Gains
//! are absolute differences to the named baseline run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::{ReportArgs, UsageError};

#[derive(Debug, Clone)]
struct Row {
    shot: usize,
    seed: u64,
    pipeline_id: String,
    val_top1: f64,
    test_top1: f64,
}

#[derive(Debug)]
struct Run {
    hash: String,
    pipeline_id: String,
    /// shot -> mean selected test top-1 over seeds
    mean_by_shot: BTreeMap<usize, f64>,
}

fn parse_summary_csv(path: &Path) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("shot,seed,batch_size") {
        // not a head-summary file (e.g. a probe summary); skip
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 11 {
            continue;
        }
        rows.push(Row {
            shot: fields[0].parse().with_context(|| format!("bad row in {}", path.display()))?,
            seed: fields[1].parse()?,
            pipeline_id: fields[6].to_string(),
            val_top1: fields[7].parse()?,
            test_top1: fields[8].parse()?,
        });
    }
    Ok(rows)
}

fn summarize_run(hash: String, rows: Vec<Row>) -> Option<Run> {
    if rows.is_empty() {
        return None;
    }
    let pipeline_id = rows[0].pipeline_id.clone();
    // (shot, seed) -> selected (best-val) test score
    let mut selected: BTreeMap<(usize, u64), (f64, f64)> = BTreeMap::new();
    for row in &rows {
        let entry = selected
            .entry((row.shot, row.seed))
            .or_insert((f64::NEG_INFINITY, 0.0));
        if row.val_top1 > entry.0 {
            *entry = (row.val_top1, row.test_top1);
        }
    }
    let mut by_shot: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for ((shot, _), (_, test)) in &selected {
        by_shot.entry(*shot).or_default().push(*test);
    }
    let mean_by_shot = by_shot
        .into_iter()
        .map(|(shot, scores)| (shot, scores.iter().sum::<f64>() / scores.len() as f64))
        .collect();
    Some(Run {
        hash,
        pipeline_id,
        mean_by_shot,
    })
}

fn load_runs(dir: &Path) -> Result<Vec<Run>> {
    let mut runs = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading metrics dir {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("summary_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    for path in paths {
        let name = path.file_stem().unwrap().to_string_lossy();
        let hash = name.trim_start_matches("summary_").to_string();
        if let Some(run) = summarize_run(hash, parse_summary_csv(&path)?) {
            runs.push(run);
        }
    }
    Ok(runs)
}

pub fn report(args: ReportArgs) -> Result<()> {
    let runs = load_runs(&args.metrics)?;
    if runs.is_empty() {
        return Err(UsageError(format!(
            "no summary_*.csv files under {}",
            args.metrics.display()
        ))
        .into());
    }
    let baseline_index = runs
        .iter()
        .position(|r| r.hash == args.baseline || r.pipeline_id == args.baseline)
        .ok_or_else(|| UsageError(format!("missing baseline id {:?}", args.baseline)))?;
    let baseline = &runs[baseline_index];

    let out_dir = args.out.unwrap_or_else(|| args.metrics.clone());
    std::fs::create_dir_all(&out_dir)?;

    let mut csv = String::from("shot,pipeline_id,run,baseline_mean,treatment_mean,gain\n");
    // shot -> (label, gain) for the charts
    let mut gains_by_shot: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
    for (index, run) in runs.iter().enumerate() {
        if index == baseline_index {
            continue;
        }
        for (&shot, &treatment_mean) in &run.mean_by_shot {
            let Some(&baseline_mean) = baseline.mean_by_shot.get(&shot) else {
                continue;
            };
            let gain = treatment_mean - baseline_mean;
            csv.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:+.6}\n",
                shot, run.pipeline_id, run.hash, baseline_mean, treatment_mean, gain
            ));
            gains_by_shot
                .entry(shot)
                .or_default()
                .push((run.pipeline_id.clone(), gain));
        }
    }
    let gains_path = out_dir.join("gains.csv");
    std::fs::write(&gains_path, &csv)?;
    println!("wrote {}", gains_path.display());

    for (shot, gains) in &gains_by_shot {
        let path = out_dir.join(format!("gains_shot{shot}.svg"));
        std::fs::write(&path, gain_chart_svg(*shot, &baseline.pipeline_id, gains))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// A static horizontal bar chart of absolute gains.
fn gain_chart_svg(shot: usize, baseline_id: &str, gains: &[(String, f64)]) -> String {
    let bar_height = 26.0;
    let gap = 10.0;
    let label_width = 220.0;
    let plot_width = 420.0;
    let height = 60.0 + gains.len() as f64 * (bar_height + gap);
    let width = label_width + plot_width + 40.0;
    let max_abs = gains
        .iter()
        .map(|(_, g)| g.abs())
        .fold(1e-9f64, f64::max);
    let zero_x = label_width + plot_width / 2.0;
    let scale = plot_width / 2.0 / max_abs;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"10\" y=\"22\" font-size=\"15\">{shot}-shot top-1 gains vs {baseline_id}</text>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{zero_x:.1}\" y1=\"40\" x2=\"{zero_x:.1}\" y2=\"{:.1}\" stroke=\"#888\"/>\n",
        height - 10.0
    ));
    for (i, (label, gain)) in gains.iter().enumerate() {
        let y = 48.0 + i as f64 * (bar_height + gap);
        let bar = gain * scale;
        let (x, w) = if *gain >= 0.0 {
            (zero_x, bar)
        } else {
            (zero_x + bar, -bar)
        };
        let color = if *gain >= 0.0 { "#2e7d32" } else { "#b23b3b" };
        svg.push_str(&format!(
            "  <text x=\"10\" y=\"{:.1}\">{}</text>\n",
            y + bar_height * 0.7,
            label
        ));
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{bar_height:.1}\" fill=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{:+.3}</text>\n",
            zero_x + plot_width / 2.0 + 6.0,
            y + bar_height * 0.7,
            gain
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
