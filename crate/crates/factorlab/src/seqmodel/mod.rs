//! Small trainable sequence models with exact-gradient training.
//!
//! Three architectures share one parameter-store and training loop: a
//! pre-norm decoder-only transformer with learned positional embeddings, a
//! vanilla tanh RNN, and an LSTM.  Forward and backward passes are written
//! out by hand against flat parameter buffers; [`grad_check`] validates the
//! analytic gradients against central finite differences, and training runs
//! Adam on mean next-token cross-entropy with a fresh sampled batch per step.
//!
//! Models are generic over [`Scalar`]: `f32` for training throughput, `f64`
//! for gradient checking and bit-level determinism tests.

mod adam;
mod gradcheck;
mod params;
mod recurrent;
#[cfg(test)]
mod tests;
mod train;
mod transformer;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckConfig};
pub use params::{ParamSet, TensorSpec};
pub use recurrent::RecurrentNet;
pub use train::{
    checkpoint_steps, next_token_targets, train, train_with_schedule, write_training_csv,
    TrainOutcome,
};
pub use transformer::Transformer;

use ndarray::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Float type a model runs in: `f32` or `f64`.
pub trait Scalar: ndarray::NdFloat + Default + Send + Sync + 'static {
    const DTYPE: crate::io::Dtype;
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: crate::io::Dtype = crate::io::Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: crate::io::Dtype = crate::io::Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Transformer,
    Rnn,
    Lstm,
}

/// Model shape.  The MLP width and head width are fixed conventions:
/// `d_ff = 4 * d_model` and `d_head = d_model / n_heads`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab: usize,
    /// Maximum number of input positions.  Data of length L with a BOS column
    /// occupies L + 1 positions.
    pub n_ctx: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.vocab == 0 || self.n_ctx == 0 {
            return Err(Error::InvalidParameter(
                "model dimensions must be positive".into(),
            ));
        }
        if self.arch == Arch::Transformer
            && (self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads))
        {
            return Err(Error::InvalidParameter(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// The 4-layer, 3-head, d_model 120 transformer used for the main
    /// five-factor experiments (vocabulary 433, data length 8 plus BOS).
    pub fn reference_small(init_seed: u64) -> Self {
        Self {
            arch: Arch::Transformer,
            n_layers: 4,
            n_heads: 3,
            d_model: 120,
            vocab: 433,
            n_ctx: 9,
            init_seed,
        }
    }

    /// The large-capacity variant: d_model 480, d_ff 1920.
    pub fn reference_large(init_seed: u64) -> Self {
        Self {
            d_model: 480,
            ..Self::reference_small(init_seed)
        }
    }
}

/// Optimization protocol: Adam on mean next-token cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    /// Persist a checkpoint every this many steps (plus step 0 and the final
    /// step) when an output directory is given.  `None` keeps only in-memory
    /// metrics.
    #[serde(default)]
    pub checkpoint_stride: Option<u64>,
    /// Keep batch generation single-threaded and synchronous.
    #[serde(default)]
    pub deterministic: bool,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(steps: u64, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            lr,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            seed,
            checkpoint_stride: None,
            deterministic: false,
        }
    }

    /// The full-scale protocol: lr 5e-4, batch 25000, no weight decay.
    pub fn full_scale(steps: u64, seed: u64) -> Self {
        Self::new(steps, 25_000, 5e-4, seed)
    }
}

/// Named activation-capture points.
///
/// `ResidPost(k)` is the residual stream after block k's MLP addition and
/// before any later normalization; `FinalPrenorm` aliases the input to the
/// final layer norm (the residual stream after the last block).  For the
/// recurrent models `ResidPost(k)` is the hidden state of stacked layer k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CapturePoint {
    Embed,
    ResidPost(usize),
    FinalPrenorm,
    Logits,
}

impl std::fmt::Display for CapturePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CapturePoint::Embed => write!(f, "embed"),
            CapturePoint::ResidPost(k) => write!(f, "resid_post.{k}"),
            CapturePoint::FinalPrenorm => write!(f, "final_prenorm"),
            CapturePoint::Logits => write!(f, "logits"),
        }
    }
}

impl std::str::FromStr for CapturePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "embed" {
            return Ok(CapturePoint::Embed);
        }
        if s == "final_prenorm" {
            return Ok(CapturePoint::FinalPrenorm);
        }
        if s == "logits" {
            return Ok(CapturePoint::Logits);
        }
        if let Some(k) = s.strip_prefix("resid_post.") {
            if let Ok(k) = k.parse::<usize>() {
                return Ok(CapturePoint::ResidPost(k));
            }
        }
        Err(Error::UnknownCapturePoint(s.to_string()))
    }
}

/// One checkpoint row of training telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Telemetry across a run; steps are strictly increasing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub rows: Vec<MetricsRow>,
}

impl TrainMetrics {
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.step > last.step, "metrics steps must increase");
        }
        self.rows.push(row);
    }
}

/// Logits plus any requested activation captures, all shaped
/// `batch x positions x width`.
pub struct ForwardOutput<F: Scalar> {
    pub logits: Array3<F>,
    pub captures: Vec<(CapturePoint, Array3<F>)>,
}

/// A trainable sequence model.
pub enum SequenceModel<F: Scalar> {
    Transformer(Transformer<F>),
    Rnn(RecurrentNet<F>),
    Lstm(RecurrentNet<F>),
}

impl<F: Scalar> SequenceModel<F> {
    /// Deterministically initialize a model from its configuration.
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.arch {
            Arch::Transformer => SequenceModel::Transformer(Transformer::new(cfg)?),
            Arch::Rnn => SequenceModel::Rnn(RecurrentNet::new(cfg)?),
            Arch::Lstm => SequenceModel::Lstm(RecurrentNet::new(cfg)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            SequenceModel::Transformer(m) => m.config(),
            SequenceModel::Rnn(m) | SequenceModel::Lstm(m) => m.config(),
        }
    }

    pub fn params(&self) -> &ParamSet<F> {
        match self {
            SequenceModel::Transformer(m) => m.params(),
            SequenceModel::Rnn(m) | SequenceModel::Lstm(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        match self {
            SequenceModel::Transformer(m) => m.params_mut(),
            SequenceModel::Rnn(m) | SequenceModel::Lstm(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Run the model, returning logits and the requested captures.  Captures
    /// are observation-only: logits are identical with or without them.
    pub fn forward_with_capture(
        &self,
        tokens: ArrayView2<u32>,
        points: &[CapturePoint],
    ) -> Result<ForwardOutput<F>> {
        for p in points {
            if let CapturePoint::ResidPost(k) = p {
                if *k >= self.config().n_layers {
                    return Err(Error::UnknownCapturePoint(p.to_string()));
                }
            }
        }
        match self {
            SequenceModel::Transformer(m) => m.forward_with_capture(tokens, points),
            SequenceModel::Rnn(m) | SequenceModel::Lstm(m) => {
                m.forward_with_capture(tokens, points)
            }
        }
    }

    /// Mean cross-entropy over target positions (entries with target == NO_TARGET
    /// are excluded), plus the gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        tokens: ArrayView2<u32>,
        targets: ArrayView2<u32>,
    ) -> Result<(f64, ParamSet<F>)> {
        match self {
            SequenceModel::Transformer(m) => m.loss_and_grad(tokens, targets),
            SequenceModel::Rnn(m) | SequenceModel::Lstm(m) => m.loss_and_grad(tokens, targets),
        }
    }

    /// Mean cross-entropy only (no gradients).
    pub fn loss(&self, tokens: ArrayView2<u32>, targets: ArrayView2<u32>) -> Result<f64> {
        let out = self.forward_with_capture(tokens, &[])?;
        cross_entropy_mean(&out.logits, targets)
    }

    /// The learned token-embedding weight matrix, `vocab x d_model`
    /// (positional embeddings excluded).
    pub fn embedding_matrix(&self) -> Array2<F> {
        self.params()
            .view2("embed.tok")
            .expect("token embedding present")
            .to_owned()
    }
}

/// Marker for positions that carry no next-token target.
pub const NO_TARGET: u32 = u32::MAX;

/// Mean cross-entropy of logits against integer targets, skipping
/// [`NO_TARGET`] positions.  Accumulated in f64 in a fixed order.
pub fn cross_entropy_mean<F: Scalar>(logits: &Array3<F>, targets: ArrayView2<u32>) -> Result<f64> {
    let (b, p, v) = logits.dim();
    if targets.dim() != (b, p) {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs logits {:?}",
            targets.dim(),
            logits.dim()
        )));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..b {
        for j in 0..p {
            let t = targets[[i, j]];
            if t == NO_TARGET {
                continue;
            }
            let row = logits.slice(s![i, j, ..]);
            let mut maxv = f64::NEG_INFINITY;
            for &x in row.iter() {
                maxv = maxv.max(x.into_f64());
            }
            let mut denom = 0.0f64;
            for &x in row.iter() {
                denom += (x.into_f64() - maxv).exp();
            }
            let tv = row[t as usize].into_f64();
            total += denom.ln() + maxv - tv;
            count += 1;
            debug_assert!((t as usize) < v);
        }
    }
    if count == 0 {
        return Err(Error::ShapeMismatch("no target positions".into()));
    }
    Ok(total / count as f64)
}
