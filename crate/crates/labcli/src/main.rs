//! Config-driven experiment runner for the sequence laboratory.
//!
//! Verbs: `generate` (dump a batch with exact targets), `train`, `analyze`
//! (diagnostics over persisted checkpoints), `report` (SVG figures + summary
//! table), `verify` (the oracle-backed acceptance checks), and `replicate`
//! (canned end-to-end experiment presets).

mod manifest;
mod presets;
mod report;
mod runner;
mod svg;

use std::path::PathBuf;

use anyhow::bail;
use clap::{Parser, Subcommand};

use factorlab::config::{load_experiment, ExperimentConfig};
use factorlab::verify::{run_preset, TrainSmokeOptions, PRESETS};

#[derive(Parser)]
#[command(
    name = "labcli",
    version,
    about = "Compositional-GHMM sequence laboratory: generate data, train sequence models, measure activation geometry"
)]
struct Cli {
    /// Rayon thread-pool size (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a token batch plus exact belief-state targets and dump them.
    Generate {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory for batch.bin / targets_*.bin.
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences (default: the config's batch size).
        #[arg(long)]
        sequences: Option<usize>,
        /// Sampling seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump joint tensor-product targets.
        #[arg(long)]
        joint: bool,
    },
    /// Train a model, persisting checkpoints and training.csv.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's training and initialization seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Strictly synchronous single-logical-stream mode.
        #[arg(long)]
        deterministic: bool,
    },
    /// Run the geometry diagnostics over a run directory's checkpoints.
    Analyze {
        /// Run directory produced by `train` or `replicate`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Render SVG figures and a summary table from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run acceptance checks; exit code 0 only if every check passes.
    Verify {
        /// One of: oracles, ground-truth-dims, numerics, sampling,
        /// train-smoke, all.
        preset: String,
        /// Seeds for the reduced-scale training check (comma separated).
        #[arg(long)]
        seeds: Option<String>,
        /// Step override for the reduced-scale training check.
        #[arg(long)]
        steps: Option<u64>,
        /// Batch-size override for the reduced-scale training check.
        #[arg(long)]
        batch: Option<usize>,
        /// Train every seed even after two have passed.
        #[arg(long)]
        no_early_stop: bool,
        /// Emit machine-readable JSON instead of text lines.
        #[arg(long)]
        json: bool,
    },
    /// End-to-end canned experiments: train + analyze + report.
    Replicate {
        /// One of: independent, chain, noisy-grid, train-smoke.
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the preset's training steps (the full presets take many
        /// hours on one core).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        deterministic: bool,
    },
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: independent-desk, chain-desk, noisy-desk,
    /// train-smoke.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self, seed: u64) -> anyhow::Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), None) => Ok(load_experiment(path)?),
            (None, Some(name)) => presets::build(name, seed, None),
            _ => bail!("exactly one of --config/--preset is required"),
        }
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match cli.cmd {
        Cmd::Generate {
            source,
            out,
            sequences,
            seed,
            joint,
        } => {
            let cfg = source.load(seed.unwrap_or(0))?;
            runner::generate_stage(&cfg, &out, sequences, seed, joint)?;
            println!("wrote batch and targets under {}", out.display());
        }
        Cmd::Train {
            source,
            out,
            seed,
            deterministic,
        } => {
            let mut cfg = source.load(seed.unwrap_or(0))?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
                cfg.model.init_seed = seed;
            }
            let started = chrono::Utc::now().to_rfc3339();
            let summary = runner::train_stage(&cfg, &out, deterministic)?;
            manifest::write_manifest(&out, &cfg.to_toml(), &started)?;
            println!(
                "trained to step {} (final loss {:.6}); checkpoints under {}",
                summary.final_step,
                summary.final_loss,
                out.display()
            );
        }
        Cmd::Analyze { run } => {
            let started = chrono::Utc::now().to_rfc3339();
            runner::analyze_stage(&run)?;
            let config_text = std::fs::read_to_string(run.join("config.toml"))?;
            manifest::write_manifest(&run, &config_text, &started)?;
            println!("analysis CSVs written under {}", run.display());
        }
        Cmd::Report { run } => {
            report::report_stage(&run)?;
            println!("figures written under {}", run.display());
        }
        Cmd::Verify {
            preset,
            seeds,
            steps,
            batch,
            no_early_stop,
            json,
        } => {
            if !PRESETS.contains(&preset.as_str()) {
                bail!("unknown verify preset {preset}; known: {}", PRESETS.join(", "));
            }
            let mut smoke = TrainSmokeOptions::default();
            if let Some(seeds) = seeds {
                smoke.seeds = seeds
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<Result<_, _>>()?;
            }
            if let Some(steps) = steps {
                smoke.steps = steps;
            }
            if let Some(batch) = batch {
                smoke.batch_size = batch;
            }
            smoke.early_stop = !no_early_stop;
            let results = run_preset(&preset, &smoke)?;
            let all_passed = results.iter().all(|r| r.passed);
            if json {
                let rows: Vec<serde_json::Value> = results
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "name": r.name,
                            "passed": r.passed,
                            "measured": r.measured,
                            "details": r.details,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                for r in &results {
                    println!("{}", r.line());
                }
            }
            if !all_passed {
                std::process::exit(1);
            }
        }
        Cmd::Replicate {
            target,
            out,
            seed,
            steps,
            deterministic,
        } => {
            replicate(&target, &out, seed, steps, deterministic)?;
        }
    }
    Ok(())
}

fn replicate(
    target: &str,
    out: &std::path::Path,
    seed: u64,
    steps: Option<u64>,
    deterministic: bool,
) -> anyhow::Result<()> {
    let run_one = |mut cfg: ExperimentConfig, dir: PathBuf| -> anyhow::Result<()> {
        if let Some(steps) = steps {
            cfg.train.steps = steps;
        }
        let started = chrono::Utc::now().to_rfc3339();
        let summary = runner::train_stage(&cfg, &dir, deterministic)?;
        println!(
            "{}: trained to step {} (final loss {:.6})",
            dir.display(),
            summary.final_step,
            summary.final_loss
        );
        runner::analyze_stage(&dir)?;
        report::report_stage(&dir)?;
        manifest::write_manifest(&dir, &cfg.to_toml(), &started)?;
        Ok(())
    };
    match target {
        "independent" => run_one(presets::build("independent-desk", seed, None)?, out.into()),
        "chain" => run_one(presets::build("chain-desk", seed, None)?, out.into()),
        "train-smoke" => run_one(presets::build("train-smoke", seed, None)?, out.into()),
        "noisy-grid" => {
            for eps in factorlab::config::presets::noise_levels() {
                let dir = out.join(format!("eps-{eps:.3}"));
                run_one(presets::build("noisy-desk", seed, Some(eps))?, dir)?;
            }
            Ok(())
        }
        other => bail!(
            "unknown replicate target {other}; known: independent, chain, noisy-grid, train-smoke"
        ),
    }
}
