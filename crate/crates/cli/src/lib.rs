//! Command-line harness around `mtt_core`: simulation, fitting, tracking,
//! model selection and particle-count checks, driven by a JSON config.

pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::{ExperimentConfig, Mode, ResolvedConfig};
pub use error::{CliError, CliResult};
pub use run::{run, RunSummary};

/// Simulate multiple-target-tracking data and estimate its static parameters.
#[derive(Debug, Parser)]
#[command(name = "mtt", version)]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// JSON experiment configuration (a previous run's manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scans: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    /// Merge flags over the config file and validate the result.
    pub fn resolve(&self) -> CliResult<ResolvedConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::empty(),
        };
        if let Some(mode) = self.mode {
            if let Some(file_mode) = cfg.mode {
                if file_mode != mode {
                    return Err(CliError::usage(format!(
                        "--mode {} conflicts with mode {} in the config",
                        mode.name(),
                        file_mode.name()
                    )));
                }
            }
            cfg.mode = Some(mode);
        }
        if self.scans.is_some() {
            cfg.scans.clone_from(&self.scans);
        }
        if self.truth.is_some() {
            cfg.truth.clone_from(&self.truth);
        }
        if self.out_dir.is_some() {
            cfg.out_dir.clone_from(&self.out_dir);
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        cfg.resolve()
    }
}

/// Cap the global thread pool at `MTT_THREADS` if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("MTT_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "MTT_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size thread pool: {e}")))
}
