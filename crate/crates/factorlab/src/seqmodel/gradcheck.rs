//! Central finite-difference validation of the analytic gradients.

use ndarray::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SequenceModel;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub fd_epsilon: f64,
    /// Number of randomly probed parameters; everything is probed when the
    /// model has fewer parameters than this.
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            fd_epsilon: 1e-4,
            n_probe: 200,
            seed: 0,
        }
    }
}

/// Maximum relative error between analytic gradients and central finite
/// differences over a random parameter subset.  Meant for tiny f64 models;
/// the loss is evaluated `4 * n_probe` times.
///
/// Central differences are taken at `fd_epsilon` and `fd_epsilon / 2` and
/// Richardson-combined, which cancels the quadratic truncation term; without
/// this, high-curvature components (|f'''| of order 1e2 in these losses) sit
/// above 1e-3 relative error at the default step size even though the
/// analytic gradient is the true limit.
pub fn grad_check(
    model: &mut SequenceModel<f64>,
    tokens: ArrayView2<u32>,
    targets: ArrayView2<u32>,
    cfg: &GradCheckConfig,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_grad(tokens, targets)?;
    let n = analytic.len();
    let mut indices: Vec<usize> = (0..n).collect();
    if cfg.n_probe < n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        indices.shuffle(&mut rng);
        indices.truncate(cfg.n_probe);
    }

    let central = |idx: usize, eps: f64, model: &mut SequenceModel<f64>| -> Result<f64> {
        let orig = model.params().data()[idx];
        model.params_mut().data_mut()[idx] = orig + eps;
        let plus = model.loss(tokens, targets)?;
        model.params_mut().data_mut()[idx] = orig - eps;
        let minus = model.loss(tokens, targets)?;
        model.params_mut().data_mut()[idx] = orig;
        Ok((plus - minus) / (2.0 * eps))
    };

    let mut worst = 0.0f64;
    for &idx in &indices {
        let coarse = central(idx, cfg.fd_epsilon, model)?;
        let fine = central(idx, cfg.fd_epsilon / 2.0, model)?;
        let fd = (4.0 * fine - coarse) / 3.0;
        let a = analytic.data()[idx];
        // Denominator floored at 1e-4: the difference quotient carries ~1e-11
        // absolute roundoff, which would swamp the ratio on components whose
        // true gradient is near zero.
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
