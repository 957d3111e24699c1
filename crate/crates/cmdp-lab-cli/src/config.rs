//! Experiment configuration: optional JSON file, CLI flag overrides, and
//! the resolution of both into a single effective config that is echoed
//! next to every output for reproducibility.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use cmdp_lab::adaptive::DEFAULT_ROUND_CAP;
use cmdp_lab::dpdl::DEFAULT_CHECKPOINTS;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Single fixed-deviation solve.
    Dpdl,
    /// Doubling driver with statistical certification per round.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    /// Independent tuples drawn from a reference distribution.
    Sync,
    /// Single trajectory under a behavior policy.
    Async,
}

/// On-disk experiment config. Every field is optional; CLI flags override
/// file fields, and unset fields fall back to documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model JSON path (required after resolution).
    pub model: Option<PathBuf>,
    /// Pre-sampled dataset file; when absent, tuples are drawn on the fly.
    pub dataset: Option<PathBuf>,
    /// True reference distribution JSON (array, or an object with a `mu`
    /// field). Used for synchronous sampling and oracle diagnostics.
    pub mu: Option<PathBuf>,
    /// Behavior policy JSON for asynchronous sampling; uniform when absent.
    pub behavior_policy: Option<PathBuf>,
    pub mode: Option<RunMode>,
    pub dataset_mode: Option<SourceMode>,
    pub burn_in: Option<usize>,
    /// Accuracy target; the overall target in adaptive mode.
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub psi: Option<f64>,
    pub phi: Option<f64>,
    /// Multiplier on the minimal cap-satisfying iteration count.
    pub budget: Option<f64>,
    pub iterations: Option<usize>,
    pub estimation_samples: Option<usize>,
    pub varsigma: Option<f64>,
    pub eta_cap_relax: Option<f64>,
    pub checkpoints: Option<usize>,
    pub seed: Option<u64>,
    /// Adaptive mode: starting deviation level.
    pub psi_init: Option<f64>,
    pub round_cap: Option<usize>,
    /// Adaptive mode: certification sample override.
    pub n_v: Option<usize>,
    /// Recompute oracle columns into the report. Default: on when `mu` is
    /// available, off otherwise.
    pub diagnose: Option<bool>,
    pub out: Option<PathBuf>,
}

/// Flags shared by `run` and `sweep`. Each mirrors a config-file field and
/// takes precedence over it.
#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model JSON path.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Pre-sampled dataset file (header line + CSV rows).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Reference distribution JSON; enables oracle diagnostics.
    #[arg(long)]
    pub mu: Option<PathBuf>,
    /// Behavior policy JSON for asynchronous sampling.
    #[arg(long)]
    pub behavior_policy: Option<PathBuf>,
    /// dpdl: one fixed-deviation solve; adaptive: doubling driver.
    #[arg(long, value_enum)]
    pub mode: Option<RunMode>,
    /// sync: independent tuples; async: one behavior-policy trajectory.
    #[arg(long, value_enum)]
    pub dataset_mode: Option<SourceMode>,
    /// Transitions discarded before the first asynchronous tuple.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Accuracy target (overall target in adaptive mode).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Failure probability, in (0,1). Default 0.1.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Deviation level for dpdl mode. Default 1.
    #[arg(long)]
    pub psi: Option<f64>,
    /// Safety-margin parameter. Default 0.5.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Iteration-budget multiplier, >= 1. Default 1.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Override the scheduled iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the reference-estimation batch size.
    #[arg(long)]
    pub estimation_samples: Option<usize>,
    /// Override the reference-estimate floor.
    #[arg(long)]
    pub varsigma: Option<f64>,
    /// Relaxation factor on the stepsize cap. Default 1.
    #[arg(long)]
    pub eta_cap_relax: Option<f64>,
    /// Number of convergence-curve rows. Default 100.
    #[arg(long)]
    pub checkpoints: Option<usize>,
    /// Base seed; dataset and solver draw from separate streams of it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adaptive mode: starting deviation level. Default 1.
    #[arg(long)]
    pub psi_init: Option<f64>,
    /// Adaptive mode: doubling-round cap. Default 60.
    #[arg(long)]
    pub round_cap: Option<usize>,
    /// Adaptive mode: certification sample override.
    #[arg(long)]
    pub n_v: Option<usize>,
    /// Force oracle diagnostics on (requires --mu).
    #[arg(long)]
    pub diagnose: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunFlags {
    /// Load the config file (if any), overlay the flags, fill defaults, and
    /// check the fields the CLI itself owns.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };

        macro_rules! overlay {
            ($($field:ident),*) => {
                $(if self.$field.is_some() { cfg.$field = self.$field.clone(); })*
            };
        }
        overlay!(
            model, dataset, mu, behavior_policy, mode, dataset_mode, burn_in, epsilon, delta,
            psi, phi, budget, iterations, estimation_samples, varsigma, eta_cap_relax,
            checkpoints, seed, psi_init, round_cap, n_v, out
        );
        if self.diagnose {
            cfg.diagnose = Some(true);
        }

        if cfg.model.is_none() {
            bail!("a model is required (--model or the config file's `model` field)");
        }
        if cfg.epsilon.is_none() {
            bail!("an accuracy target is required (--epsilon or the config file's `epsilon`)");
        }
        cfg.mode.get_or_insert(RunMode::Dpdl);
        // With a stored dataset the file's own header decides the mode; an
        // explicit request is only checked against it.
        if cfg.dataset.is_none() {
            cfg.dataset_mode.get_or_insert(SourceMode::Sync);
        }
        cfg.burn_in.get_or_insert(0);
        cfg.delta.get_or_insert(0.1);
        cfg.psi.get_or_insert(1.0);
        cfg.phi.get_or_insert(0.5);
        cfg.budget.get_or_insert(1.0);
        cfg.eta_cap_relax.get_or_insert(1.0);
        cfg.checkpoints.get_or_insert(DEFAULT_CHECKPOINTS);
        cfg.seed.get_or_insert(0);
        cfg.psi_init.get_or_insert(1.0);
        cfg.round_cap.get_or_insert(DEFAULT_ROUND_CAP);
        cfg.out.get_or_insert_with(|| PathBuf::from("out"));

        if let Some(path) = &cfg.dataset {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
        }
        Ok(cfg)
    }
}
