//! Canned experiment configurations.
//!
//! Desk-scale presets keep the reference architecture and learning rate but
//! shrink the batch to 1024 and the step count so they finish on a
//! workstation; the deviations from the full-scale protocol (batch 25000,
//! hundreds of thousands of steps) are intentional and documented in the
//! README.

use factorlab::config::{presets as proc_presets, AnalysisConfig, DataConfig, ExperimentConfig};
use factorlab::seqmodel::{Arch, ModelConfig, TrainConfig};

pub const NAMES: &[&str] = &[
    "independent-desk",
    "chain-desk",
    "noisy-desk",
    "train-smoke",
];

pub fn build(name: &str, seed: u64, epsilon: Option<f64>) -> anyhow::Result<ExperimentConfig> {
    let cfg = match name {
        "independent-desk" => desk_config(proc_presets::five_factor_independent(), seed),
        "chain-desk" => desk_config(proc_presets::five_factor_chain(), seed),
        "noisy-desk" => {
            let eps = epsilon.unwrap_or(0.2);
            desk_config(proc_presets::five_factor_noisy(eps), seed)
        }
        "train-smoke" => train_smoke(seed),
        other => anyhow::bail!("unknown preset {other}; known: {}", NAMES.join(", ")),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reference architecture (4 layers, 3 heads, d_model 120) at desk scale:
/// batch 1024, 20k steps, lr 5e-4.
fn desk_config(process: factorlab::config::ComposedSpec, seed: u64) -> ExperimentConfig {
    let mut train = TrainConfig::new(20_000, 1024, 5e-4, seed ^ 0x7261_696e);
    train.checkpoint_stride = None; // log-spaced schedule from the analysis config
    ExperimentConfig {
        process,
        model: ModelConfig {
            arch: Arch::Transformer,
            n_layers: 4,
            n_heads: 3,
            d_model: 120,
            vocab: 433,
            n_ctx: 9,
            init_seed: seed,
        },
        train,
        data: DataConfig::default(),
        analysis: AnalysisConfig::default(),
    }
}

/// The reduced two-factor configuration used by the trend checks: 2-layer,
/// d_model 48 transformer on 2x Mess3 (vocabulary 10 with BOS), 10k steps.
fn train_smoke(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        process: proc_presets::two_mess3(),
        model: ModelConfig {
            arch: Arch::Transformer,
            n_layers: 2,
            n_heads: 3,
            d_model: 48,
            vocab: 10,
            n_ctx: 9,
            init_seed: seed,
        },
        train: TrainConfig::new(10_000, 1024, 5e-4, seed ^ 0x736d_6f6b),
        data: DataConfig::default(),
        analysis: AnalysisConfig::default(),
    }
}
