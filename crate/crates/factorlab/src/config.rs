//! Serializable process and experiment descriptions.
//!
//! The lab config format is TOML: nested tables with decimal literals.  A
//! process is a regime plus a factor list; each factor is either one
//! generator (`kind = "mess3"` etc.) or, in the chain regime, a `variants`
//! list keyed by the preceding factor's sub-token value.
//!
//! ```toml
//! [process]
//! regime = "noisy"
//! epsilon = 0.1
//!
//! [[process.factors]]
//! kind = "mess3"
//! alpha = 0.6
//! x = 0.15
//!
//! [[process.factors]]
//! kind = "bloch_walk"
//! alpha = 1.0
//! beta = 3.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compose::ComposedProcess;
use crate::ghmm::{
    make_bloch_walk, make_mess3, make_sns, BlochWalkParams, Ghmm, Mess3Params, SnsParams,
};
use crate::seqmodel::{ModelConfig, TrainConfig};
use crate::{Error, Result};

/// One elementary generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Mess3 { alpha: f64, x: f64 },
    BlochWalk { alpha: f64, beta: f64 },
    Sns { p: f64, q: f64 },
}

impl ProcessSpec {
    pub fn build(&self) -> Result<Ghmm> {
        match *self {
            ProcessSpec::Mess3 { alpha, x } => make_mess3(Mess3Params { alpha, x }),
            ProcessSpec::BlochWalk { alpha, beta } => {
                make_bloch_walk(BlochWalkParams { alpha, beta })
            }
            ProcessSpec::Sns { p, q } => make_sns(SnsParams { p, q }),
        }
    }
}

/// A factor position: a single generator, or a chain variant table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    Single(ProcessSpec),
    Chained { variants: Vec<ProcessSpec> },
}

impl FactorSpec {
    pub fn variants(&self) -> Vec<ProcessSpec> {
        match self {
            FactorSpec::Single(p) => vec![p.clone()],
            FactorSpec::Chained { variants } => variants.clone(),
        }
    }
}

/// Factor coupling regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Independent,
    Chain,
    Noisy,
}

/// A serializable multipartite generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedSpec {
    pub regime: RegimeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub factors: Vec<FactorSpec>,
}

impl ComposedSpec {
    pub fn build(&self) -> Result<ComposedProcess> {
        match self.regime {
            RegimeKind::Independent => {
                if self.epsilon.is_some() {
                    return Err(Error::Config(
                        "process.epsilon: only meaningful for regime = \"noisy\"".into(),
                    ));
                }
                let factors = self.single_factors()?;
                if factors.len() == 1 {
                    ComposedProcess::single(factors.into_iter().next().unwrap())
                } else {
                    ComposedProcess::independent_product(factors)
                }
            }
            RegimeKind::Chain => {
                if self.epsilon.is_some() {
                    return Err(Error::Config(
                        "process.epsilon: only meaningful for regime = \"noisy\"".into(),
                    ));
                }
                let tables = self
                    .factors
                    .iter()
                    .map(|f| f.variants().iter().map(|p| p.build()).collect())
                    .collect::<Vec<Result<Vec<_>>>>()
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                ComposedProcess::conditional_chain(tables)
            }
            RegimeKind::Noisy => {
                let epsilon = self.epsilon.ok_or_else(|| {
                    Error::Config("process.epsilon: required for regime = \"noisy\"".into())
                })?;
                let base = ComposedProcess::independent_product(self.single_factors()?)?;
                ComposedProcess::noisy_channel(base, epsilon)
            }
        }
    }

    fn single_factors(&self) -> Result<Vec<Ghmm>> {
        self.factors
            .iter()
            .enumerate()
            .map(|(n, f)| match f {
                FactorSpec::Single(p) => p.build(),
                FactorSpec::Chained { .. } => Err(Error::Config(format!(
                    "process.factors[{n}]: variant tables require regime = \"chain\""
                ))),
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Wrapper<'a> {
            process: &'a ComposedSpec,
        }
        toml::to_string_pretty(&Wrapper { process: self }).expect("spec serializes")
    }
}

// ---------------------------------------------------------------------------
// Canned process configurations
// ---------------------------------------------------------------------------

pub mod presets {
    use super::*;

    pub fn mess3_default() -> ProcessSpec {
        ProcessSpec::Mess3 { alpha: 0.6, x: 0.15 }
    }

    pub fn bloch_walk_default() -> ProcessSpec {
        ProcessSpec::BlochWalk { alpha: 1.0, beta: 3.0 }
    }

    pub fn sns_default() -> ProcessSpec {
        ProcessSpec::Sns { p: 0.5, q: 0.5 }
    }

    /// Three Mess3(0.6, 0.15) factors plus two Bloch Walk(1, 3) factors
    /// running independently: vocabulary 432 (+BOS), joint dimension 243.
    pub fn five_factor_independent() -> ComposedSpec {
        ComposedSpec {
            regime: RegimeKind::Independent,
            epsilon: None,
            factors: vec![
                FactorSpec::Single(mess3_default()),
                FactorSpec::Single(mess3_default()),
                FactorSpec::Single(mess3_default()),
                FactorSpec::Single(bloch_walk_default()),
                FactorSpec::Single(bloch_walk_default()),
            ],
        }
    }

    /// The five-factor dependency chain: the root runs M1, each later factor
    /// selects its variant by the preceding factor's sub-token.
    pub fn five_factor_chain() -> ComposedSpec {
        let m1 = ProcessSpec::Mess3 { alpha: 0.60, x: 0.15 };
        let m2 = ProcessSpec::Mess3 { alpha: 0.79, x: 0.11 };
        let m3 = ProcessSpec::Mess3 { alpha: 0.60, x: 0.50 };
        let b1 = ProcessSpec::BlochWalk { alpha: 1.0, beta: 2.0 };
        let b2 = ProcessSpec::BlochWalk { alpha: 1.0, beta: 2.5 };
        let b3 = ProcessSpec::BlochWalk { alpha: 1.0, beta: 3.0 };
        let b4 = ProcessSpec::BlochWalk { alpha: 1.0, beta: 3.5 };
        ComposedSpec {
            regime: RegimeKind::Chain,
            epsilon: None,
            factors: vec![
                FactorSpec::Single(m1.clone()),
                FactorSpec::Chained {
                    variants: vec![m1.clone(), m2.clone(), m3.clone()],
                },
                FactorSpec::Chained {
                    variants: vec![m1, m2, m3],
                },
                FactorSpec::Chained {
                    variants: vec![b1.clone(), b2.clone(), b3.clone()],
                },
                FactorSpec::Chained {
                    variants: vec![b1, b2, b3, b4],
                },
            ],
        }
    }

    /// The five independent factors observed through the uniform replacement
    /// channel.
    pub fn five_factor_noisy(epsilon: f64) -> ComposedSpec {
        ComposedSpec {
            epsilon: Some(epsilon),
            regime: RegimeKind::Noisy,
            ..five_factor_independent()
        }
    }

    /// The channel strengths swept in the noise experiments.
    pub fn noise_levels() -> Vec<f64> {
        vec![0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5]
    }

    pub fn two_mess3() -> ComposedSpec {
        ComposedSpec {
            regime: RegimeKind::Independent,
            epsilon: None,
            factors: vec![
                FactorSpec::Single(mess3_default()),
                FactorSpec::Single(mess3_default()),
            ],
        }
    }

    pub fn two_sns() -> ComposedSpec {
        ComposedSpec {
            regime: RegimeKind::Independent,
            epsilon: None,
            factors: vec![
                FactorSpec::Single(sns_default()),
                FactorSpec::Single(sns_default()),
            ],
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Sequence-length and BOS policy for generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Number of non-BOS tokens per sequence.
    #[serde(default = "default_data_len")]
    pub l: usize,
}

fn default_data_len() -> usize {
    8
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { l: default_data_len() }
    }
}

/// Which diagnostics run at each checkpoint and at what size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Sequences in the evaluation batch used for spectra and regression.
    #[serde(default = "default_eval_sequences")]
    pub eval_sequences: usize,
    /// Number of log-spaced checkpoints (including step 0 and the final
    /// step) when the train config gives no explicit stride.
    #[serde(default = "default_n_checkpoints")]
    pub n_checkpoints: usize,
    #[serde(default = "default_vary_groups")]
    pub vary_one_groups: usize,
    #[serde(default = "default_vary_variants")]
    pub vary_one_variants: usize,
    /// Components per vary-one factor subspace.
    #[serde(default = "default_subspace_components")]
    pub subspace_components: usize,
    #[serde(default = "default_cev_threshold")]
    pub cev_threshold: f64,
    #[serde(default = "default_rcond_grid_cfg")]
    pub rcond_grid: Vec<f64>,
    #[serde(default = "default_cv_folds_cfg")]
    pub cv_folds: usize,
    /// Also track exact joint targets (only sensible for small compositions).
    #[serde(default)]
    pub include_joint: bool,
    /// Size of the randomly-initialized model ensemble used for the
    /// initial-overlap reference band (0 disables it).
    #[serde(default = "default_init_band_seeds")]
    pub init_band_seeds: usize,
    #[serde(default = "default_analysis_seed")]
    pub seed: u64,
}

fn default_init_band_seeds() -> usize {
    20
}

fn default_eval_sequences() -> usize {
    4096
}

fn default_n_checkpoints() -> usize {
    10
}

fn default_vary_groups() -> usize {
    64
}

fn default_vary_variants() -> usize {
    64
}

fn default_subspace_components() -> usize {
    2
}

fn default_cev_threshold() -> f64 {
    0.95
}

fn default_rcond_grid_cfg() -> Vec<f64> {
    crate::analysis::default_rcond_grid()
}

fn default_cv_folds_cfg() -> usize {
    crate::analysis::DEFAULT_CV_FOLDS
}

fn default_analysis_seed() -> u64 {
    0x5eed_a11a
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

/// Everything an experiment run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub process: ComposedSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    /// Structural validation beyond what serde enforces; error messages carry
    /// the offending field path.
    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        let process = self
            .process
            .build()
            .map_err(|e| Error::Config(format!("process: {e}")))?;
        let bos = self.model.arch == crate::seqmodel::Arch::Transformer;
        let expected = if bos {
            process.codec().vocab_with_bos()
        } else {
            process.codec().n_tokens()
        };
        if self.model.vocab != expected {
            return Err(Error::Config(format!(
                "model.vocab: {} does not match process vocabulary {expected}",
                self.model.vocab
            )));
        }
        if self.data.l + usize::from(bos) > self.model.n_ctx {
            return Err(Error::Config(format!(
                "data.l: length {} (+BOS) exceeds model.n_ctx {}",
                self.data.l, self.model.n_ctx
            )));
        }
        if self.train.steps == 0 || self.train.batch_size == 0 {
            return Err(Error::Config(
                "train.steps / train.batch_size: must be positive".into(),
            ));
        }
        if self.analysis.cv_folds < 2 {
            return Err(Error::Config("analysis.cv_folds: need at least 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checkpoint schedule: the explicit stride when configured, otherwise
    /// `analysis.n_checkpoints` log-spaced steps from 0 to the final step.
    pub fn checkpoint_schedule(&self) -> Vec<u64> {
        if self.train.checkpoint_stride.is_some() {
            return crate::seqmodel::checkpoint_steps(&self.train);
        }
        log_spaced_steps(self.train.steps, self.analysis.n_checkpoints)
    }
}

/// `count` strictly increasing steps from 0 to `steps`, log-spaced.
pub fn log_spaced_steps(steps: u64, count: usize) -> Vec<u64> {
    if steps == 0 {
        return vec![0];
    }
    let count = count.max(2);
    let mut out = vec![0u64];
    let lo = 1.0f64;
    let hi = steps as f64;
    for i in 0..count - 1 {
        let f = i as f64 / (count - 2).max(1) as f64;
        let v = (lo * (hi / lo).powf(f)).round() as u64;
        if v > *out.last().unwrap() && v < steps {
            out.push(v);
        }
    }
    out.push(steps);
    out
}

/// Parse and validate an experiment config, reporting the TOML field path on
/// deserialization errors.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_experiment(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parse and validate an experiment config from TOML text.
pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::Regime;
    use crate::seqmodel::Arch;

    #[test]
    fn process_specs_round_trip_through_toml() {
        for spec in [
            presets::five_factor_independent(),
            presets::five_factor_chain(),
            presets::five_factor_noisy(0.2),
            presets::two_sns(),
        ] {
            let text = spec.to_toml();
            #[derive(Deserialize)]
            struct Wrapper {
                process: ComposedSpec,
            }
            let parsed: Wrapper = toml::from_str(&text).unwrap();
            assert_eq!(parsed.process, spec);
            parsed.process.build().unwrap();
        }
    }

    #[test]
    fn preset_dimensions() {
        let p = presets::five_factor_independent().build().unwrap();
        assert_eq!(p.codec().vocab_with_bos(), 433);
        assert_eq!(p.joint_dim(), 243);
        let chain = presets::five_factor_chain().build().unwrap();
        assert_eq!(chain.codec().n_tokens(), 432);
        assert!(matches!(chain.regime(), Regime::Chain));
        let noisy = presets::five_factor_noisy(0.1).build().unwrap();
        assert!(matches!(noisy.regime(), Regime::Noisy { epsilon } if epsilon == 0.1));
        assert_eq!(presets::noise_levels().len(), 8);
    }

    #[test]
    fn noisy_requires_epsilon_and_rejects_on_others() {
        let mut spec = presets::five_factor_noisy(0.1);
        spec.epsilon = None;
        assert!(spec.build().is_err());
        let mut indep = presets::five_factor_independent();
        indep.epsilon = Some(0.2);
        assert!(indep.build().is_err());
    }

    #[test]
    fn experiment_config_parses_with_field_paths() {
        let text = r#"
[process]
regime = "independent"

[[process.factors]]
kind = "mess3"
alpha = 0.6
x = 0.15

[[process.factors]]
kind = "mess3"
alpha = 0.6
x = 0.15

[model]
arch = "transformer"
n_layers = 2
n_heads = 2
d_model = 48
vocab = 10
n_ctx = 9
init_seed = 0

[train]
steps = 100
batch_size = 64
lr = 5e-4
seed = 1
"#;
        let cfg = parse_experiment(text).unwrap();
        assert_eq!(cfg.model.d_model, 48);
        assert_eq!(cfg.data.l, 8);
        assert_eq!(cfg.analysis.cv_folds, 10);

        let bad = text.replace("alpha = 0.6\nx = 0.15", "alpha = \"high\"\nx = 0.15");
        let err = parse_experiment(&bad).unwrap_err();
        let msg = format!("{err}");
        assert!(
            msg.contains("process.factors"),
            "error should carry field path: {msg}"
        );
    }

    #[test]
    fn experiment_config_validation_catches_vocab_mismatch() {
        let mut cfg = ExperimentConfig {
            process: presets::two_mess3(),
            model: ModelConfig {
                arch: Arch::Transformer,
                n_layers: 2,
                n_heads: 2,
                d_model: 48,
                vocab: 11, // should be 10
                n_ctx: 9,
                init_seed: 0,
            },
            train: TrainConfig::new(10, 8, 5e-4, 0),
            data: DataConfig::default(),
            analysis: AnalysisConfig::default(),
        };
        let err = cfg.validate().unwrap_err();
        assert!(format!("{err}").contains("model.vocab"));
        cfg.model.vocab = 10;
        cfg.validate().unwrap();
        cfg.data.l = 12; // exceeds n_ctx 9
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn log_spaced_schedule_is_increasing_and_bracketed() {
        let steps = log_spaced_steps(10_000, 10);
        assert_eq!(*steps.first().unwrap(), 0);
        assert_eq!(*steps.last().unwrap(), 10_000);
        for w in steps.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(steps.len() >= 8);
        assert_eq!(log_spaced_steps(0, 5), vec![0]);
    }
}
