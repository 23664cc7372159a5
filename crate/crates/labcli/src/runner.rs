//! The experiment pipeline: train with checkpoints, then run the geometry
//! diagnostics over every checkpoint and emit the report CSVs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::prelude::*;

use factorlab::analysis::{
    fit_linear_readout, pca_spectrum, regression_subspaces, subspace_overlap, vary_one_subspaces,
    write_attribution_csv, write_overlap_csv, write_regression_csv,
    embedding_factor_attribution, OverlapReport, RegressionFit, SubspaceBasis, SubspaceRank,
};
use factorlab::compose::Regime;
use factorlab::config::ExperimentConfig;
use factorlab::datagen::{
    ground_truth_targets, sample_sequences, vary_one_dataset, SampleSpec, SequenceBatch,
    VaryOneDataset,
};
use factorlab::io::load_params;
use factorlab::seqmodel::{train_with_schedule, Arch, CapturePoint, SequenceModel};
use factorlab::verify::{capture_activations, capture_rows};

/// Stream offset reserved for analysis batches so they never collide with
/// training data streams.
const ANALYSIS_STREAM_BASE: u64 = 1 << 40;

pub struct RunSummary {
    pub final_step: u64,
    pub final_loss: f64,
}

/// Train according to the config, persisting checkpoints, training.csv, and
/// a copy of the config into `out`.
pub fn train_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    deterministic: bool,
) -> anyhow::Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let process = cfg.process.build()?;
    let mut model = SequenceModel::<f32>::build(cfg.model)?;
    let mut tc = cfg.train;
    tc.deterministic = deterministic || tc.deterministic;
    let schedule = cfg.checkpoint_schedule();
    let outcome = train_with_schedule(&mut model, &process, &tc, cfg.data.l, Some(out), &schedule)?;
    let last = outcome.metrics.rows.last().expect("metrics recorded");
    Ok(RunSummary {
        final_step: last.step,
        final_loss: last.loss,
    })
}

/// Recompute every diagnostic from the persisted checkpoints of a run
/// directory.
pub fn analyze_stage(run_dir: &Path) -> anyhow::Result<()> {
    let cfg = factorlab::config::load_experiment(&run_dir.join("config.toml"))
        .context("run directory has no readable config.toml")?;
    let process = cfg.process.build()?;
    let checkpoints = list_checkpoints(run_dir)?;
    if checkpoints.is_empty() {
        bail!("no checkpoints under {}", run_dir.display());
    }
    let bos = cfg.model.arch == Arch::Transformer;
    let capture = CapturePoint::ResidPost(cfg.model.n_layers - 1);

    // fixed evaluation batch and exact targets
    let spec = SampleSpec {
        m: cfg.analysis.eval_sequences,
        l: cfg.data.l,
        seed: cfg.analysis.seed,
        stream_offset: ANALYSIS_STREAM_BASE,
        bos,
    };
    let eval = sample_sequences(&process, &spec);
    let targets = ground_truth_targets(&process, &eval, cfg.analysis.include_joint)?;
    let sum_d: usize = targets.factor_dims.iter().sum();
    let rows = cfg.analysis.eval_sequences * cfg.data.l;
    let y = targets
        .factored
        .to_shape((rows, sum_d))
        .expect("contiguous")
        .to_owned();

    write_reference_spectra(run_dir, &targets.factored, targets.joint.as_ref(), rows)?;

    // vary-one datasets are fixed across checkpoints
    let vary_sets: Option<Vec<VaryOneDataset>> = if process.regime() == Regime::Independent {
        let sets = (0..process.n_factors())
            .map(|n| {
                vary_one_dataset(
                    &process,
                    n,
                    cfg.analysis.vary_one_groups,
                    cfg.analysis.vary_one_variants,
                    cfg.data.l,
                    cfg.analysis.seed ^ 0x76_61_72_79,
                    bos,
                )
            })
            .collect::<factorlab::Result<Vec<_>>>()?;
        Some(sets)
    } else {
        None
    };

    // reference band: the spread of mean pairwise overlap across an ensemble
    // of randomly initialized models
    if let Some(sets) = &vary_sets {
        if cfg.analysis.init_band_seeds > 0 {
            write_init_band(run_dir, &cfg, sets, bos, capture)?;
        }
    }

    let mut cev_rows: Vec<(u64, usize, f64, f64)> = Vec::new();
    let mut kstar_rows: Vec<(u64, usize)> = Vec::new();
    let mut regression_rows: Vec<(u64, RegressionFit)> = Vec::new();
    let mut overlap_rows: Vec<(u64, OverlapReport)> = Vec::new();
    let mut final_fit: Option<RegressionFit> = None;
    let mut final_kstar = 0usize;
    let mut final_overlaps: Vec<f64> = Vec::new();

    let n_ckpts = checkpoints.len();
    for (idx, (step, path)) in checkpoints.iter().enumerate() {
        let mut model = SequenceModel::<f32>::build(cfg.model)?;
        load_params(path, model.params_mut())?;

        let acts = capture_rows(&model, eval.tokens.view(), capture, bos)?;
        let spectrum = pca_spectrum(acts.view(), true)?;
        let mut acc = 0.0;
        for (j, &v) in spectrum.eigenvalues.iter().enumerate() {
            acc += v;
            cev_rows.push((*step, j + 1, v, acc / spectrum.total));
        }
        let kstar = spectrum.effective_dim(cfg.analysis.cev_threshold)?;
        kstar_rows.push((*step, kstar));

        let fit = fit_linear_readout(
            acts.view(),
            y.view(),
            &cfg.analysis.rcond_grid,
            cfg.analysis.cv_folds,
            Some(&targets.factor_dims),
        )?;

        // factor subspaces: vary-one where the regime permits, otherwise the
        // spans of the regression coefficient blocks
        let bases: Vec<SubspaceBasis> = match &vary_sets {
            Some(sets) => {
                let mut out = Vec::with_capacity(sets.len());
                for ds in sets {
                    let groups = ds
                        .groups
                        .iter()
                        .map(|g| capture_activations(&model, g.view(), capture, bos))
                        .collect::<factorlab::Result<Vec<_>>>()?;
                    out.push(vary_one_subspaces(
                        &groups,
                        SubspaceRank::TopK(cfg.analysis.subspace_components),
                        ds.factor,
                    )?);
                }
                out
            }
            None => regression_subspaces(&fit, &targets.factor_dims, 1e-10)?,
        };
        let mut step_overlaps = Vec::new();
        for i in 0..bases.len() {
            for j in i + 1..bases.len() {
                let report = subspace_overlap(&bases[i], &bases[j])?;
                step_overlaps.push(report.score);
                overlap_rows.push((*step, report));
            }
        }

        if idx + 1 == n_ckpts {
            final_kstar = kstar;
            final_overlaps = step_overlaps;
            final_fit = Some(fit.clone());
            // embedding attribution at the end of training
            let e = model.embedding_matrix().mapv(|v| v as f64);
            let e_tokens = e.slice(s![..process.codec().n_tokens(), ..]);
            let attribution = embedding_factor_attribution(e_tokens, process.codec())?;
            write_attribution_csv(&run_dir.join("attribution.csv"), &attribution)?;
        }
        regression_rows.push((*step, fit));
    }

    write_cev_csv(&run_dir.join("cev.csv"), &cev_rows)?;
    write_kstar_csv(&run_dir.join("kstar.csv"), &kstar_rows)?;
    write_regression_csv(&run_dir.join("regression.csv"), &regression_rows)?;
    write_overlap_csv(&run_dir.join("overlap.csv"), &overlap_rows)?;

    let fit = final_fit.expect("at least one checkpoint");
    let summary = serde_json::json!({
        "final_step": checkpoints.last().unwrap().0,
        "final_kstar": final_kstar,
        "cev_threshold": cfg.analysis.cev_threshold,
        "final_r2_total": fit.r2,
        "final_rmse_total": fit.rmse,
        "final_r2_per_factor": fit.per_factor.iter().map(|b| b.r2).collect::<Vec<_>>(),
        "final_rmse_per_factor": fit.per_factor.iter().map(|b| b.rmse).collect::<Vec<_>>(),
        "final_mean_overlap": mean(&final_overlaps),
        "subspace_source": if vary_sets.is_some() { "vary-one" } else { "regression" },
    });
    std::fs::write(
        run_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean pairwise vary-one overlap for `init_band_seeds` randomly initialized
/// models, written as `overlap_init_band.csv` (`seed,score`).
fn write_init_band(
    run_dir: &Path,
    cfg: &ExperimentConfig,
    vary_sets: &[VaryOneDataset],
    bos: bool,
    capture: CapturePoint,
) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(run_dir.join("overlap_init_band.csv"))?);
    writeln!(f, "seed,score")?;
    for band_seed in 0..cfg.analysis.init_band_seeds as u64 {
        let mut model_cfg = cfg.model;
        model_cfg.init_seed = 0x0b0a_0000 + band_seed;
        let model = SequenceModel::<f32>::build(model_cfg)?;
        let mut bases = Vec::with_capacity(vary_sets.len());
        for ds in vary_sets {
            let groups = ds
                .groups
                .iter()
                .map(|g| capture_activations(&model, g.view(), capture, bos))
                .collect::<factorlab::Result<Vec<_>>>()?;
            bases.push(vary_one_subspaces(
                &groups,
                SubspaceRank::TopK(cfg.analysis.subspace_components),
                ds.factor,
            )?);
        }
        let mut scores = Vec::new();
        for i in 0..bases.len() {
            for j in i + 1..bases.len() {
                scores.push(subspace_overlap(&bases[i], &bases[j])?.score);
            }
        }
        writeln!(f, "{},{}", band_seed, mean(&scores))?;
    }
    Ok(())
}

/// Exact ground-truth CEV curves for the factored (and optionally joint)
/// targets of this run's process, used as dashed references in reports.
fn write_reference_spectra(
    run_dir: &Path,
    factored: &Array3<f64>,
    joint: Option<&Array3<f64>>,
    rows: usize,
) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(run_dir.join("cev_reference.csv"))?);
    writeln!(f, "kind,j,lambda,cev")?;
    let fac = factored
        .to_shape((rows, factored.dim().2))
        .expect("contiguous")
        .to_owned();
    let spectrum = pca_spectrum(fac.view(), true)?;
    let mut acc = 0.0;
    for (j, &v) in spectrum.eigenvalues.iter().enumerate() {
        acc += v;
        writeln!(f, "factored,{},{},{}", j + 1, v, acc / spectrum.total)?;
    }
    if let Some(joint) = joint {
        let j2 = joint
            .to_shape((rows, joint.dim().2))
            .expect("contiguous")
            .to_owned();
        let spectrum = pca_spectrum(j2.view(), true)?;
        let mut acc = 0.0;
        for (j, &v) in spectrum.eigenvalues.iter().enumerate() {
            acc += v;
            writeln!(f, "joint,{},{},{}", j + 1, v, acc / spectrum.total)?;
        }
    }
    Ok(())
}

fn write_cev_csv(path: &Path, rows: &[(u64, usize, f64, f64)]) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,j,lambda,cev")?;
    for (step, j, lambda, cev) in rows {
        writeln!(f, "{step},{j},{lambda},{cev}")?;
    }
    Ok(())
}

fn write_kstar_csv(path: &Path, rows: &[(u64, usize)]) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,kstar")?;
    for (step, k) in rows {
        writeln!(f, "{step},{k}")?;
    }
    Ok(())
}

/// Sorted `(step, path)` pairs of the run's persisted checkpoints.
pub fn list_checkpoints(run_dir: &Path) -> anyhow::Result<Vec<(u64, PathBuf)>> {
    let dir = run_dir.join("checkpoints");
    if !dir.is_dir() {
        bail!("missing checkpoints directory under {}", run_dir.display());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, path));
        }
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

/// Dump a sampled batch and its exact targets in the header+payload format.
pub fn generate_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    sequences: Option<usize>,
    seed: Option<u64>,
    include_joint: bool,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let process = cfg.process.build()?;
    let bos = cfg.model.arch == Arch::Transformer;
    let spec = SampleSpec {
        m: sequences.unwrap_or(cfg.train.batch_size),
        l: cfg.data.l,
        seed: seed.unwrap_or(cfg.train.seed),
        stream_offset: 0,
        bos,
    };
    let batch = sample_sequences(&process, &spec);
    dump_batch(&out.join("batch.bin"), &batch)?;
    let targets = ground_truth_targets(&process, &batch, include_joint)?;
    dump_f64_tensor(
        &out.join("targets_factored.bin"),
        targets.factored.view(),
        &batch,
    )?;
    if let Some(joint) = &targets.joint {
        dump_f64_tensor(&out.join("targets_joint.bin"), joint.view(), &batch)?;
    }
    Ok(())
}

fn dump_batch(path: &Path, batch: &SequenceBatch) -> anyhow::Result<()> {
    let (m, p) = batch.tokens.dim();
    let header = factorlab::io::DumpHeader {
        name: None,
        shape: vec![m, p],
        dtype: "i32le".into(),
        process: Some(batch.fingerprint.clone()),
        seed: Some(batch.seed),
    };
    let data: Vec<i32> = batch.tokens.iter().map(|&t| t as i32).collect();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    factorlab::io::write_entry_i32(&mut w, &header, &data)?;
    Ok(())
}

fn dump_f64_tensor(
    path: &Path,
    tensor: ArrayView3<f64>,
    batch: &SequenceBatch,
) -> anyhow::Result<()> {
    let (m, l, d) = tensor.dim();
    let header = factorlab::io::DumpHeader {
        name: None,
        shape: vec![m, l, d],
        dtype: "f32le".into(),
        process: Some(batch.fingerprint.clone()),
        seed: Some(batch.seed),
    };
    let data: Vec<f32> = tensor.iter().map(|&v| v as f32).collect();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    factorlab::io::write_entry_f32(&mut w, &header, &data)?;
    Ok(())
}
