//! Render a run directory's CSVs into static SVG figures plus a plain-text
//! summary table.  Reads only; never mutates run data.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};

use crate::svg::{Plot, Series};

pub fn report_stage(run_dir: &Path) -> anyhow::Result<()> {
    let required = [
        "training.csv",
        "cev.csv",
        "kstar.csv",
        "regression.csv",
        "overlap.csv",
        "cev_reference.csv",
        "summary.json",
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !run_dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        bail!(
            "run directory {} is missing: {} (run `labcli analyze` first)",
            run_dir.display(),
            missing.join(", ")
        );
    }

    training_plot(run_dir)?;
    cev_plot(run_dir)?;
    kstar_plot(run_dir)?;
    overlap_plot(run_dir)?;
    regression_plot(run_dir)?;
    summary_table(run_dir)?;
    Ok(())
}

fn read_csv(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect::<Vec<_>>())
        .unwrap_or_default();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn f(v: &str) -> f64 {
    v.parse().unwrap_or(f64::NAN)
}

fn training_plot(run_dir: &Path) -> anyhow::Result<()> {
    let (_, rows) = read_csv(&run_dir.join("training.csv"))?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (f(&r[0]), f(&r[1]))).collect();
    Plot {
        title: "Training loss".into(),
        x_label: "step".into(),
        y_label: "mean cross-entropy (nats)".into(),
        log_x: true,
        series: vec![Series {
            label: "loss".into(),
            points,
            dashed: false,
            color: 0,
        }],
    }
    .write(&run_dir.join("training.svg"))?;
    Ok(())
}

/// CEV-vs-components curves for the first, middle, and final checkpoints,
/// with the exact factored/joint target curves dashed.
fn cev_plot(run_dir: &Path) -> anyhow::Result<()> {
    let (_, rows) = read_csv(&run_dir.join("cev.csv"))?;
    let mut by_step: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        let step: u64 = r[0].parse().unwrap_or(0);
        by_step.entry(step).or_default().push((f(&r[1]), f(&r[3])));
    }
    let steps: Vec<u64> = by_step.keys().copied().collect();
    let mut picks = vec![steps[0]];
    if steps.len() > 2 {
        picks.push(steps[steps.len() / 2]);
    }
    picks.push(*steps.last().unwrap());
    picks.dedup();

    let mut series = Vec::new();
    for (i, step) in picks.iter().enumerate() {
        series.push(Series {
            label: format!("step {step}"),
            points: by_step[step].clone(),
            dashed: false,
            color: i,
        });
    }
    let (_, ref_rows) = read_csv(&run_dir.join("cev_reference.csv"))?;
    for (i, kind) in ["factored", "joint"].iter().enumerate() {
        let points: Vec<(f64, f64)> = ref_rows
            .iter()
            .filter(|r| r[0] == *kind)
            .map(|r| (f(&r[1]), f(&r[3])))
            .collect();
        if !points.is_empty() {
            series.push(Series {
                label: format!("{kind} targets (exact)"),
                points,
                dashed: true,
                color: 5 + i,
            });
        }
    }
    Plot {
        title: "Cumulative explained variance of residual-stream activations".into(),
        x_label: "principal components".into(),
        y_label: "CEV".into(),
        log_x: false,
        series,
    }
    .write(&run_dir.join("cev.svg"))?;
    Ok(())
}

fn reference_kstar(run_dir: &Path, kind: &str, p: f64) -> anyhow::Result<Option<usize>> {
    let (_, rows) = read_csv(&run_dir.join("cev_reference.csv"))?;
    for r in rows.iter().filter(|r| r[0] == kind) {
        if f(&r[3]) >= p {
            return Ok(Some(r[1].parse().unwrap_or(0)));
        }
    }
    Ok(None)
}

fn kstar_plot(run_dir: &Path) -> anyhow::Result<()> {
    let (_, rows) = read_csv(&run_dir.join("kstar.csv"))?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (f(&r[0]), f(&r[1]))).collect();
    let last_step = points.last().map_or(1.0, |p| p.0).max(1.0);
    let mut series = vec![Series {
        label: "k* (0.95)".into(),
        points,
        dashed: false,
        color: 0,
    }];
    for (i, kind) in ["factored", "joint"].iter().enumerate() {
        if let Some(k) = reference_kstar(run_dir, kind, 0.95)? {
            series.push(Series {
                label: format!("{kind} target k*"),
                points: vec![(0.0, k as f64), (last_step, k as f64)],
                dashed: true,
                color: 5 + i,
            });
        }
    }
    Plot {
        title: "Effective dimensionality over training".into(),
        x_label: "step".into(),
        y_label: "components for 95% CEV".into(),
        log_x: true,
        series,
    }
    .write(&run_dir.join("kstar.svg"))?;
    Ok(())
}

fn overlap_plot(run_dir: &Path) -> anyhow::Result<()> {
    let (_, rows) = read_csv(&run_dir.join("overlap.csv"))?;
    let mut by_pair: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let step: u64 = r[0].parse().unwrap_or(0);
        by_pair
            .entry((r[1].clone(), r[2].clone()))
            .or_default()
            .push((f(&r[0]), f(&r[4])));
        by_step.entry(step).or_default().push(f(&r[4]));
    }
    let mut series = Vec::new();
    for (i, ((a, b), points)) in by_pair.into_iter().enumerate() {
        series.push(Series {
            label: format!("F{a}-F{b}"),
            points,
            dashed: true,
            color: i + 1,
        });
    }
    let last_step = by_step.keys().last().copied().unwrap_or(1) as f64;
    let mean_points: Vec<(f64, f64)> = by_step
        .iter()
        .map(|(s, v)| (*s as f64, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    series.insert(
        0,
        Series {
            label: "mean".into(),
            points: mean_points,
            dashed: false,
            color: 0,
        },
    );
    // 90% band for the overlap of randomly initialized models, when present
    let band_path = run_dir.join("overlap_init_band.csv");
    if band_path.exists() {
        let (_, band_rows) = read_csv(&band_path)?;
        let mut scores: Vec<f64> = band_rows.iter().map(|r| f(&r[1])).collect();
        scores.retain(|v| v.is_finite());
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if scores.len() >= 2 {
            let lo = scores[(scores.len() as f64 * 0.05).floor() as usize];
            let hi = scores[((scores.len() as f64 * 0.95).ceil() as usize - 1).min(scores.len() - 1)];
            for (v, label) in [(lo, "init band 5%"), (hi, "init band 95%")] {
                series.push(Series {
                    label: label.into(),
                    points: vec![(1.0, v), (last_step.max(2.0), v)],
                    dashed: true,
                    color: 7,
                });
            }
        }
    }
    Plot {
        title: "Pairwise factor-subspace overlap over training".into(),
        x_label: "step".into(),
        y_label: "overlap".into(),
        log_x: true,
        series,
    }
    .write(&run_dir.join("overlap.svg"))?;
    Ok(())
}

fn regression_plot(run_dir: &Path) -> anyhow::Result<()> {
    let (header, rows) = read_csv(&run_dir.join("regression.csv"))?;
    let mut series = vec![Series {
        label: "rmse total".into(),
        points: rows.iter().map(|r| (f(&r[0]), f(&r[1]))).collect(),
        dashed: false,
        color: 0,
    }];
    for (col, name) in header.iter().enumerate() {
        if let Some(fi) = name.strip_prefix("rmse_f") {
            series.push(Series {
                label: format!("rmse F{fi}"),
                points: rows.iter().map(|r| (f(&r[0]), f(&r[col]))).collect(),
                dashed: true,
                color: 1 + fi.parse::<usize>().unwrap_or(0),
            });
        }
    }
    Plot {
        title: "Belief-state readout error over training".into(),
        x_label: "step".into(),
        y_label: "RMSE".into(),
        log_x: true,
        series,
    }
    .write(&run_dir.join("regression.svg"))?;
    Ok(())
}

fn summary_table(run_dir: &Path) -> anyhow::Result<()> {
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json"))?)?;
    let (_, training) = read_csv(&run_dir.join("training.csv"))?;
    let final_loss = training.last().map(|r| f(&r[1])).unwrap_or(f64::NAN);
    let mut out = String::new();
    out.push_str(&format!("run: {}\n", run_dir.display()));
    out.push_str(&format!(
        "final step:            {}\n",
        summary["final_step"]
    ));
    out.push_str(&format!("final loss:            {final_loss:.6}\n"));
    out.push_str(&format!(
        "final k* (at {}):    {}\n",
        summary["cev_threshold"], summary["final_kstar"]
    ));
    out.push_str(&format!(
        "final R^2 total:       {}\n",
        summary["final_r2_total"]
    ));
    if let Some(per) = summary["final_r2_per_factor"].as_array() {
        for (n, v) in per.iter().enumerate() {
            out.push_str(&format!("final R^2 factor {n}:    {v}\n"));
        }
    }
    out.push_str(&format!(
        "final mean overlap:    {} (subspaces from {})\n",
        summary["final_mean_overlap"], summary["subspace_source"]
    ));
    std::fs::write(run_dir.join("summary.txt"), &out)?;
    print!("{out}");
    Ok(())
}
