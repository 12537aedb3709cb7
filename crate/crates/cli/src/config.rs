//! Experiment configuration: a JSON file, optionally overridden by flags.
//!
//! The manifest written by every run is the fully resolved configuration, so
//! feeding a manifest back through `--config` repeats the run.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mtt_core::em::StepSizeSchedule;
use mtt_core::model::CvParams;
use mtt_core::smc::SmcConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    FitBatch,
    FitOnline,
    Track,
    SelectK,
    CheckN,
    OracleEm,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::FitBatch => "fit-batch",
            Mode::FitOnline => "fit-online",
            Mode::Track => "track",
            Mode::SelectK => "select-k",
            Mode::CheckN => "check-n",
            Mode::OracleEm => "oracle-em",
        }
    }

    fn needs_scans(self) -> bool {
        !matches!(self, Mode::Simulate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSettings {
    pub n_particles: usize,
    pub l_best: usize,
    pub ess_threshold: f64,
}

impl Default for ParticleSettings {
    fn default() -> Self {
        let d = SmcConfig::default();
        ParticleSettings {
            n_particles: d.n_particles,
            l_best: d.l_best,
            ess_threshold: d.ess_threshold,
        }
    }
}

impl ParticleSettings {
    pub fn smc(&self, seed: u64) -> SmcConfig {
        SmcConfig {
            n_particles: self.n_particles,
            l_best: self.l_best,
            ess_threshold: self.ess_threshold,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckNSettings {
    /// Particle counts to compare, ascending.
    pub candidates: Vec<usize>,
    pub verification_length: usize,
    /// Largest acceptable mean absolute target-count error.
    pub error_bound: f64,
}

impl Default for CheckNSettings {
    fn default() -> Self {
        CheckNSettings {
            candidates: vec![50, 100, 200],
            verification_length: 100,
            error_bound: 1.0,
        }
    }
}

fn default_steps() -> usize {
    100
}

fn default_iters() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    /// Generating parameters (simulate), tracking parameters (track), or the
    /// initial estimate (every fitting mode).
    pub theta: Option<CvParams>,
    pub scans: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Number of steps to simulate.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Fixed target count: simulate stationary fixed-K data and fit the
    /// fixed-K model.
    #[serde(default)]
    pub fixed_k: Option<usize>,
    /// Feed true births and survivals from `truth` to the filter.
    #[serde(default)]
    pub known_birth_death: bool,
    #[serde(default)]
    pub particles: ParticleSettings,
    #[serde(default)]
    pub schedule: StepSizeSchedule,
    /// Batch iterations (fit-batch, oracle-em).
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub k_range: Vec<usize>,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub check_n: CheckNSettings,
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Check that everything the mode needs is present and consistent.
    pub fn resolve(self) -> CliResult<ResolvedConfig> {
        let mode = self.mode.ok_or_else(|| CliError::usage("no mode given"))?;
        let seed = self
            .seed
            .ok_or_else(|| CliError::usage("a seed is required (--seed or \"seed\")"))?;
        let theta = self
            .theta
            .ok_or_else(|| CliError::usage(format!("mode {} needs \"theta\"", mode.name())))?;
        theta
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let out_dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        if mode.needs_scans() && self.scans.is_none() {
            return Err(CliError::usage(format!(
                "mode {} needs --scans",
                mode.name()
            )));
        }
        if !mode.needs_scans() && (self.scans.is_some() || self.truth.is_some()) {
            return Err(CliError::usage("simulate does not read --scans or --truth"));
        }
        let needs_truth = matches!(mode, Mode::OracleEm) || self.known_birth_death;
        if needs_truth && self.truth.is_none() {
            return Err(CliError::usage(format!(
                "mode {} with these settings needs --truth",
                mode.name()
            )));
        }
        if self.known_birth_death && self.fixed_k.is_some() {
            return Err(CliError::usage(
                "known_birth_death and fixed_k are mutually exclusive",
            ));
        }
        if matches!(mode, Mode::SelectK) {
            if self.k_range.is_empty() {
                return Err(CliError::usage("select-k needs a nonempty \"k_range\""));
            }
            if self.fixed_k.is_some() {
                return Err(CliError::usage(
                    "select-k takes \"k_range\", not \"fixed_k\"",
                ));
            }
        }
        if matches!(mode, Mode::CheckN) {
            if self.check_n.verification_length == 0 {
                return Err(CliError::usage(
                    "check-n needs a positive verification_length",
                ));
            }
            if self.check_n.candidates.is_empty() {
                return Err(CliError::usage("check-n needs at least one candidate N"));
            }
        }
        if matches!(mode, Mode::Simulate) && self.steps == 0 {
            return Err(CliError::usage("simulate needs steps >= 1"));
        }
        if matches!(mode, Mode::FitBatch | Mode::OracleEm) && self.iters == 0 {
            return Err(CliError::usage("iters must be at least 1"));
        }
        self.particles
            .smc(seed)
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let mut config = self;
        config.mode = Some(mode);
        config.seed = Some(seed);
        config.out_dir = Some(out_dir);
        Ok(ResolvedConfig {
            mode,
            seed,
            theta,
            config,
        })
    }
}

/// A configuration that passed [`ExperimentConfig::resolve`].
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub mode: Mode,
    pub seed: u64,
    pub theta: CvParams,
    pub config: ExperimentConfig,
}

impl ResolvedConfig {
    pub fn out_dir(&self) -> &Path {
        self.config.out_dir.as_deref().expect("resolved")
    }
}
