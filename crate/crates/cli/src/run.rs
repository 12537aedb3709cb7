//! Execution of each mode; every artifact lands in the output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use mtt_core::em::{
    self, mean_count_error, EstimateTrace, OnlineConfig, PopulationMode, SaemConfig,
};
use mtt_core::io::{self, format_float};
use mtt_core::model::{CvParams, MStepOptions};
use mtt_core::simulator::{simulate, simulate_fixed_k, GroundTruth, ObservationScan};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, ResolvedConfig};
use crate::error::{CliError, CliResult};

/// Files written by a run, manifest last.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
}

pub fn run(rc: &ResolvedConfig) -> CliResult<RunSummary> {
    let dir = rc.out_dir();
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    info!("mode {} (seed {})", rc.mode.name(), rc.seed);
    let mut outputs = match rc.mode {
        Mode::Simulate => run_simulate(rc)?,
        Mode::FitBatch => run_fit_batch(rc)?,
        Mode::FitOnline => run_fit_online(rc)?,
        Mode::OracleEm => run_oracle_em(rc)?,
        Mode::Track => run_track(rc)?,
        Mode::SelectK => run_select_k(rc)?,
        Mode::CheckN => run_check_n(rc)?,
    };
    let manifest = dir.join("manifest.json");
    let mut w = create(&manifest)?;
    serde_json::to_writer_pretty(&mut w, &rc.config).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    outputs.push(manifest);
    Ok(RunSummary { outputs })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn with_path(path: &Path) -> impl Fn(mtt_core::error::MttError) -> CliError + '_ {
    move |e| CliError::from(e.context(path.display().to_string()))
}

fn load_scans(rc: &ResolvedConfig) -> CliResult<Vec<ObservationScan>> {
    let path = rc.config.scans.as_deref().expect("resolved");
    let scans = io::read_scans(open(path)?).map_err(with_path(path))?;
    if scans.is_empty() {
        return Err(CliError::usage(format!(
            "{} contains no scans",
            path.display()
        )));
    }
    info!("read {} scans from {}", scans.len(), path.display());
    Ok(scans)
}

fn load_truth(rc: &ResolvedConfig, scans: &[ObservationScan]) -> CliResult<Option<GroundTruth>> {
    let Some(path) = rc.config.truth.as_deref() else {
        return Ok(None);
    };
    let truth = io::read_truth(open(path)?).map_err(with_path(path))?;
    truth.validate_against(scans).map_err(with_path(path))?;
    Ok(Some(truth))
}

fn population(rc: &ResolvedConfig, truth: Option<&GroundTruth>) -> PopulationMode {
    if let Some(k) = rc.config.fixed_k {
        PopulationMode::FixedK(k)
    } else if rc.config.known_birth_death {
        PopulationMode::known_from(&truth.expect("resolved").records)
    } else {
        PopulationMode::Sampled
    }
}

fn mstep_options(rc: &ResolvedConfig) -> MStepOptions {
    if rc.config.fixed_k.is_some() || rc.mode == Mode::SelectK {
        MStepOptions::fixed_k()
    } else {
        MStepOptions::default()
    }
}

fn online_config(rc: &ResolvedConfig, n_particles: usize, pop: PopulationMode) -> OnlineConfig {
    let mut smc = rc.config.particles.smc(rc.seed);
    smc.n_particles = n_particles;
    OnlineConfig {
        smc,
        schedule: rc.config.schedule.clone(),
        mstep: mstep_options(rc),
        population: pop,
    }
}

fn write_trace(rc: &ResolvedConfig, trace: &EstimateTrace) -> CliResult<Vec<PathBuf>> {
    let path = rc.out_dir().join("trace.csv");
    io::write_trace(&mut create(&path)?, trace)?;
    if let Some(last) = trace.last() {
        info!("final estimate at index {}: {:?}", last.index, last.theta);
    }
    Ok(vec![path])
}

fn simulate_data(
    theta: &CvParams,
    fixed_k: Option<usize>,
    n: usize,
    seed: u64,
) -> CliResult<(Vec<ObservationScan>, GroundTruth)> {
    let model = theta.assemble()?;
    Ok(match fixed_k {
        Some(k) => simulate_fixed_k(&model, k, n, seed)?,
        None => simulate(&model, n, seed)?,
    })
}

fn run_simulate(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let (scans, truth) = simulate_data(&rc.theta, rc.config.fixed_k, rc.config.steps, rc.seed)?;
    let dir = rc.out_dir();
    let (sp, tp) = (dir.join("scans.jsonl"), dir.join("truth.jsonl"));
    io::write_scans(&mut create(&sp)?, &scans)?;
    io::write_truth(&mut create(&tp)?, &truth)?;
    info!("simulated {} steps", scans.len());
    Ok(vec![sp, tp])
}

fn run_fit_batch(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let truth = load_truth(rc, &scans)?;
    let cfg = SaemConfig {
        smc: rc.config.particles.smc(rc.seed),
        schedule: rc.config.schedule.clone(),
        iters: rc.config.iters,
        mstep: mstep_options(rc),
        population: population(rc, truth.as_ref()),
    };
    write_trace(rc, &em::saem_batch(&scans, &rc.theta, &cfg)?)
}

fn run_fit_online(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let truth = load_truth(rc, &scans)?;
    let cfg = online_config(
        rc,
        rc.config.particles.n_particles,
        population(rc, truth.as_ref()),
    );
    write_trace(rc, &em::online_em(&scans, &rc.theta, &cfg)?)
}

fn run_oracle_em(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let truth = load_truth(rc, &scans)?.expect("resolved");
    let trace = em::oracle_em(
        &scans,
        &truth,
        &rc.theta,
        rc.config.iters,
        &mstep_options(rc),
    )?;
    write_trace(rc, &trace)
}

fn run_track(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let truth = load_truth(rc, &scans)?;
    let smc = rc.config.particles.smc(rc.seed);
    let steps = em::track(&scans, &rc.theta, &smc, &population(rc, truth.as_ref()))?;
    let path = rc.out_dir().join("track.csv");
    let mut w = create(&path)?;
    writeln!(w, "t,k_hat,k_true,ess,loglik")?;
    for s in &steps {
        let k_true = truth
            .as_ref()
            .map(|g| g.records[s.t - 1].k_x().to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            s.t,
            format_float(s.k_hat),
            k_true,
            format_float(s.ess),
            format_float(s.loglik)
        )?;
    }
    w.flush()?;
    if let Some(g) = &truth {
        info!("mean |K_hat - K| = {}", mean_count_error(&steps, g));
    }
    Ok(vec![path])
}

fn run_select_k(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let mut checkpoints = rc.config.checkpoints.clone();
    if checkpoints.is_empty() {
        checkpoints.push(scans.len());
    }
    let cfg = online_config(rc, rc.config.particles.n_particles, PopulationMode::Sampled);
    let sel = em::select_k(&scans, &rc.config.k_range, &rc.theta, &cfg, &checkpoints)?;
    let dir = rc.out_dir();
    let curves = dir.join("select_k.csv");
    let mut w = create(&curves)?;
    let header: Vec<String> = sel.candidates.iter().map(|k| format!("k{k}")).collect();
    writeln!(w, "t,{}", header.join(","))?;
    for t in 0..scans.len() {
        let row: Vec<String> = sel.curves.iter().map(|c| format_float(c[t])).collect();
        writeln!(w, "{},{}", t + 1, row.join(","))?;
    }
    w.flush()?;
    let decisions = dir.join("select_k_decisions.csv");
    let mut w = create(&decisions)?;
    writeln!(w, "t,k")?;
    for (t, k) in &sel.decisions {
        writeln!(w, "{t},{k}")?;
        info!("t={t}: K = {k}");
    }
    w.flush()?;
    Ok(vec![curves, decisions])
}

/// Result of the particle-count adequacy check for one candidate `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdequacyRow {
    pub n_particles: usize,
    pub mean_count_error: f64,
    pub theta_hat: CvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdequacyReport {
    pub rows: Vec<AdequacyRow>,
    pub error_bound: f64,
    /// Smallest candidate whose error is within the bound.
    pub recommended: Option<usize>,
}

/// Seed of the verification data; shared by all candidates so their errors
/// are paired.
fn verification_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// For each candidate `N`: fit online, simulate verification data at the
/// fitted parameters, track it with those parameters known, and measure the
/// target-count error.
pub fn check_n(
    rc: &ResolvedConfig,
    scans: &[ObservationScan],
    truth: Option<&GroundTruth>,
) -> CliResult<AdequacyReport> {
    let settings = &rc.config.check_n;
    let mut candidates = settings.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let rows = candidates
        .par_iter()
        .map(|&n| -> CliResult<AdequacyRow> {
            let cfg = online_config(rc, n, population(rc, truth));
            let trace = em::online_em(scans, &rc.theta, &cfg)?;
            let theta_hat = trace.final_theta().expect("nonempty trace");
            let (vscans, vtruth) = simulate_data(
                &theta_hat,
                rc.config.fixed_k,
                settings.verification_length,
                verification_seed(rc.seed),
            )?;
            let pop = match rc.config.fixed_k {
                Some(k) => PopulationMode::FixedK(k),
                None => PopulationMode::Sampled,
            };
            let steps = em::track(&vscans, &theta_hat, &cfg.smc, &pop)?;
            Ok(AdequacyRow {
                n_particles: n,
                mean_count_error: mean_count_error(&steps, &vtruth),
                theta_hat,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let recommended = rows
        .iter()
        .find(|r| r.mean_count_error <= settings.error_bound)
        .map(|r| r.n_particles);
    Ok(AdequacyReport {
        rows,
        error_bound: settings.error_bound,
        recommended,
    })
}

fn run_check_n(rc: &ResolvedConfig) -> CliResult<Vec<PathBuf>> {
    let scans = load_scans(rc)?;
    let truth = load_truth(rc, &scans)?;
    let report = check_n(rc, &scans, truth.as_ref())?;
    let dir = rc.out_dir();
    let csv = dir.join("check_n.csv");
    let mut w = create(&csv)?;
    writeln!(w, "n_particles,mean_count_error")?;
    for r in &report.rows {
        writeln!(w, "{},{}", r.n_particles, format_float(r.mean_count_error))?;
        info!(
            "N={}: mean |K_hat - K| = {}",
            r.n_particles, r.mean_count_error
        );
    }
    w.flush()?;
    let json = dir.join("check_n.json");
    let mut w = create(&json)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    match report.recommended {
        Some(n) => info!("recommended N = {n}"),
        None => info!(
            "no candidate N meets the error bound {}",
            report.error_bound
        ),
    }
    Ok(vec![csv, json])
}
