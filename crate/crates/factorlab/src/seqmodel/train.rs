//! The training loop: fresh sampled batch each step, Adam on mean
//! next-token cross-entropy, checkpoints at a configurable stride.
//!
//! Batch generation runs on a producer thread feeding a bounded queue unless
//! deterministic mode asks for strictly synchronous execution; either way the
//! data for step `k` is a pure function of `(seed, k)`, so the two modes
//! produce identical runs.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use ndarray::prelude::*;

use super::{Adam, MetricsRow, Scalar, SequenceModel, TrainConfig, TrainMetrics, NO_TARGET};
use crate::compose::ComposedProcess;
use crate::datagen::{sample_sequences, SampleSpec};
use crate::io::save_params;
use crate::{Error, Result};

/// Result of a training run; checkpoints (if any) are on disk.
pub struct TrainOutcome {
    pub metrics: TrainMetrics,
    pub checkpoint_steps: Vec<u64>,
}

/// Shift tokens left by one to produce next-token targets; the final column
/// has no target.
pub fn next_token_targets(tokens: ArrayView2<u32>) -> Array2<u32> {
    let (b, p) = tokens.dim();
    let mut targets = Array2::from_elem((b, p), NO_TARGET);
    for i in 0..b {
        for j in 0..p - 1 {
            targets[[i, j]] = tokens[[i, j + 1]];
        }
    }
    targets
}

/// Steps at which checkpoints/metrics are recorded: step 0, every stride,
/// and the final step.
pub fn checkpoint_steps(tc: &TrainConfig) -> Vec<u64> {
    let mut steps = vec![0];
    if let Some(stride) = tc.checkpoint_stride {
        if stride > 0 {
            let mut s = stride;
            while s < tc.steps {
                steps.push(s);
                s += stride;
            }
        }
    }
    steps.push(tc.steps);
    steps.dedup();
    steps
}

/// Train `model` on sequences of length `data_len` sampled fresh from
/// `process` each step, recording checkpoints at the stride derived from the
/// train config.  Transformers get a BOS column; recurrent models do not.
/// When `out_dir` is given, checkpoints and a `training.csv` are persisted
/// there.
pub fn train<F: Scalar>(
    model: &mut SequenceModel<F>,
    process: &ComposedProcess,
    tc: &TrainConfig,
    data_len: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let schedule = checkpoint_steps(tc);
    train_with_schedule(model, process, tc, data_len, out_dir, &schedule)
}

/// [`train`] with an explicit sorted list of checkpoint steps (0 and the
/// final step are included automatically).
pub fn train_with_schedule<F: Scalar>(
    model: &mut SequenceModel<F>,
    process: &ComposedProcess,
    tc: &TrainConfig,
    data_len: usize,
    out_dir: Option<&Path>,
    schedule: &[u64],
) -> Result<TrainOutcome> {
    let bos = matches!(model, SequenceModel::Transformer(_));
    let expected_vocab = if bos {
        process.codec().vocab_with_bos()
    } else {
        process.codec().n_tokens()
    };
    let cfg = *model.config();
    if cfg.vocab != expected_vocab {
        return Err(Error::InvalidParameter(format!(
            "model vocab {} does not match process vocab {expected_vocab}",
            cfg.vocab
        )));
    }
    let positions = data_len + usize::from(bos);
    if positions > cfg.n_ctx {
        return Err(Error::InvalidParameter(format!(
            "data length {data_len} (+BOS) exceeds model context {}",
            cfg.n_ctx
        )));
    }

    let ckpt_dir = match out_dir {
        Some(dir) => {
            let d = dir.join("checkpoints");
            std::fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };
    let mut record_steps: Vec<u64> = schedule.iter().copied().filter(|&s| s <= tc.steps).collect();
    record_steps.push(0);
    record_steps.push(tc.steps);
    record_steps.sort_unstable();
    record_steps.dedup();
    let spec_for = |step: u64| SampleSpec {
        m: tc.batch_size,
        l: data_len,
        seed: tc.seed,
        stream_offset: step * tc.batch_size as u64,
        bos,
    };

    let mut metrics = TrainMetrics::default();
    let mut adam = Adam::new(tc, model.num_params());
    let started = Instant::now();

    let mut run = |next_batch: &mut dyn FnMut() -> Array2<u32>| -> Result<()> {
        for step in 0..tc.steps {
            let tokens = next_batch();
            let targets = next_token_targets(tokens.view());
            let (loss, grads) = model.loss_and_grad(tokens.view(), targets.view())?;
            if !loss.is_finite() {
                if let Some(dir) = &ckpt_dir {
                    save_params(&dir.join(format!("diagnostic-step-{step:07}.ckpt")), model.params())?;
                }
                return Err(Error::NonFiniteLoss { step, loss });
            }
            if record_steps.contains(&step) {
                if let Some(dir) = &ckpt_dir {
                    save_params(&checkpoint_path(dir, step), model.params())?;
                }
                metrics.push(MetricsRow {
                    step,
                    loss,
                    lr: tc.lr,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
            adam.step(model.params_mut(), &grads);
        }
        Ok(())
    };

    if tc.deterministic {
        let gen = |step: u64| sample_sequences(process, &spec_for(step)).tokens;
        let mut step = 0u64;
        run(&mut || {
            let b = gen(step);
            step += 1;
            b
        })?;
    } else {
        // Producer thread keeps one batch of lookahead; contents depend only
        // on the step index, so this is identical to the synchronous path.
        let (m, seed, steps) = (tc.batch_size, tc.seed, tc.steps);
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Array2<u32>>(2);
            scope.spawn(move || {
                for step in 0..steps {
                    let spec = SampleSpec {
                        m,
                        l: data_len,
                        seed,
                        stream_offset: step * m as u64,
                        bos,
                    };
                    let batch = sample_sequences(process, &spec).tokens;
                    if tx.send(batch).is_err() {
                        break;
                    }
                }
            });
            run(&mut || rx.recv().expect("batch producer hung up"))
        })?;
    }

    // Final state: evaluate on a fresh batch, persist, record.
    let batch = sample_sequences(process, &spec_for(tc.steps));
    let targets = next_token_targets(batch.tokens.view());
    let final_loss = model.loss(batch.tokens.view(), targets.view())?;
    if let Some(dir) = &ckpt_dir {
        save_params(&checkpoint_path(dir, tc.steps), model.params())?;
    }
    metrics.push(MetricsRow {
        step: tc.steps,
        loss: final_loss,
        lr: tc.lr,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    });

    if let Some(dir) = out_dir {
        write_training_csv(&dir.join("training.csv"), &metrics)?;
    }
    Ok(TrainOutcome {
        metrics,
        checkpoint_steps: record_steps,
    })
}

pub fn checkpoint_path(ckpt_dir: &Path, step: u64) -> PathBuf {
    ckpt_dir.join(format!("step-{step:07}.ckpt"))
}

pub fn write_training_csv(path: &Path, metrics: &TrainMetrics) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,lr,wall_ms")?;
    for row in &metrics.rows {
        writeln!(f, "{},{},{},{}", row.step, row.loss, row.lr, row.wall_ms)?;
    }
    Ok(())
}
