//! The three estimators: exact EM along known associations, batch SAEM with a
//! particle-filter E-step, and SMC online EM; plus model-order selection for
//! the fixed-population variant.
//!
//! Parameters may use different step-size exponents. Every distinct exponent
//! gets its own *bank* of sufficient statistics, blended at its own rate; the
//! M-step runs once per bank and each parameter is read from the result of its
//! own bank. A statistic shared by parameters of different rates (such as the
//! survivor count used by both `p_s` and `sigma_xv2`) is thereby maintained
//! twice.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::kalman::{self, GaussianMoments};
use crate::model::{lambda_mstep_with, CvParam, CvParams, MStepOptions};
use crate::simulator::{AssociationRecord, GroundTruth, ObservationScan};
use crate::smc::{smc_step, BirthDeath, ParticleSet, SmcConfig, StepOptions};
use crate::smoothing::{expectations_given_associations, Blend, StatMask, SufficientStatSet};

/// Step sizes `gamma_j = j^(-alpha)` with per-parameter exponents.
///
/// An exponent of exactly 0 gives `gamma_j = 1` (no averaging); it is meant for
/// testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizeSchedule {
    pub alpha: f64,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    /// First time step at which the online M-step runs.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    10
}

impl Default for StepSizeSchedule {
    /// Exponent 0.8 everywhere except 0.55 for `sigma_xv2`, burn-in 10.
    fn default() -> Self {
        StepSizeSchedule {
            alpha: 0.8,
            overrides: BTreeMap::from([("sigma_xv2".to_string(), 0.55)]),
            burn_in: 10,
        }
    }
}

impl StepSizeSchedule {
    /// `gamma_j = 1` for every parameter.
    pub fn unit(burn_in: usize) -> Self {
        StepSizeSchedule {
            alpha: 0.0,
            overrides: BTreeMap::new(),
            burn_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a == 0.0 || (a > 0.5 && a <= 1.0);
        if !ok(self.alpha) {
            return Err(MttError::InvalidParameter(format!(
                "step-size exponent must lie in (0.5, 1], got {}",
                self.alpha
            )));
        }
        for (name, &a) in &self.overrides {
            if CvParam::from_name(name).is_none() {
                return Err(MttError::InvalidParameter(format!(
                    "unknown parameter '{name}' in step-size overrides"
                )));
            }
            if !ok(a) {
                return Err(MttError::InvalidParameter(format!(
                    "step-size exponent for {name} must lie in (0.5, 1], got {a}"
                )));
            }
        }
        Ok(())
    }

    pub fn exponent(&self, p: CvParam) -> f64 {
        self.overrides.get(p.name()).copied().unwrap_or(self.alpha)
    }

    /// `j^(-exponent)`, or 1 for exponent 0.
    pub fn gamma(exponent: f64, j: usize) -> f64 {
        if exponent == 0.0 {
            1.0
        } else {
            (j as f64).powf(-exponent)
        }
    }

    /// Group the estimated parameters by exponent (ascending).
    pub fn banks(&self, estimated: &[CvParam]) -> Vec<RateBank> {
        let mut groups: Vec<RateBank> = Vec::new();
        for &p in estimated {
            let a = self.exponent(p);
            match groups.iter_mut().find(|b| b.exponent == a) {
                Some(b) => b.params.push(p),
                None => groups.push(RateBank {
                    exponent: a,
                    params: vec![p],
                    mask: StatMask::NONE,
                }),
            }
        }
        for b in &mut groups {
            let stats: Vec<usize> = b
                .params
                .iter()
                .flat_map(|p| p.statistics())
                .copied()
                .collect();
            b.mask = StatMask::from_statistics(&stats);
        }
        groups.sort_by(|a, b| a.exponent.total_cmp(&b.exponent));
        groups
    }
}

/// Parameters sharing one step-size exponent and the statistics they read.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBank {
    pub exponent: f64,
    pub params: Vec<CvParam>,
    pub mask: StatMask,
}

/// Parameters the M-step may change under `opts` (`sigma_xp2` is structural).
pub fn estimated_params(opts: &MStepOptions) -> Vec<CvParam> {
    CvParam::ALL
        .into_iter()
        .filter(|p| *p != CvParam::SigmaXp2 && !opts.frozen.contains(p))
        .collect()
}

/// M-step per bank, each parameter taken from its own bank's result.
pub fn merged_mstep(
    banks: &[RateBank],
    stats: &[SufficientStatSet],
    prev: &CvParams,
    opts: &MStepOptions,
) -> CvParams {
    let mut next = *prev;
    for (bank, s) in banks.iter().zip(stats) {
        let candidate = lambda_mstep_with(s, prev, opts);
        for &p in &bank.params {
            next.set(p, candidate.get(p));
        }
    }
    next
}

/// One estimate in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Iteration (batch) or time step (online); 0 is the initial value.
    pub index: usize,
    pub theta: CvParams,
    pub loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateTrace {
    pub entries: Vec<TraceEntry>,
}

impl EstimateTrace {
    pub fn push(&mut self, index: usize, theta: CvParams, loglik: Option<f64>) {
        debug_assert!(self.entries.last().is_none_or(|e| e.index < index));
        self.entries.push(TraceEntry {
            index,
            theta,
            loglik,
        });
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn final_theta(&self) -> Option<CvParams> {
        self.last().map(|e| e.theta)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How births and survivals enter the particle filter.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationMode {
    /// Drawn from the prior inside the proposal.
    Sampled,
    /// Given for every step (for ablation against known birth-death times).
    Known(Vec<BirthDeath>),
    /// `k` targets born at the first step and never dying.
    FixedK(usize),
}

impl PopulationMode {
    /// Known births and survivals taken from ground-truth records.
    pub fn known_from(records: &[AssociationRecord]) -> Self {
        PopulationMode::Known(records.iter().map(BirthDeath::from_record).collect())
    }

    fn birth_death(&self, t: usize, k_x_prev: usize) -> Result<Option<BirthDeath>> {
        Ok(match self {
            PopulationMode::Sampled => None,
            PopulationMode::Known(v) => {
                Some(v.get(t - 1).cloned().ok_or_else(|| {
                    MttError::Structural(format!("no birth-death record for t={t}"))
                })?)
            }
            PopulationMode::FixedK(k) => Some(BirthDeath::fixed(*k, k_x_prev, t)),
        })
    }

    fn k_x_prev(&self, set: &ParticleSet) -> usize {
        set.particles.first().map(|p| p.state.k_x()).unwrap_or(0)
    }
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn ln_poisson(k: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_factorial(k)
}

fn ln_bernoulli(x: bool, p: f64) -> f64 {
    if x {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Complete-data log-likelihood `ln p_theta(y_{1:n}, z_{1:n})`, with target
/// states integrated out by per-target Kalman filters.
pub fn joint_loglik(
    scans: &[ObservationScan],
    records: &[AssociationRecord],
    cv: &CvParams,
) -> Result<f64> {
    let theta = cv.assemble()?;
    let psi = &theta.glssm;
    let ln_vol = theta.region_volume().ln();
    let mut filts: Vec<GaussianMoments> = Vec::new();
    let mut total = 0.0;
    for (scan, z) in scans.iter().zip(records) {
        z.validate()?;
        if z.k_x_prev() != filts.len() || z.k_y() != scan.len() {
            return Err(MttError::Structural(format!(
                "record at t={} does not match the target history or scan",
                scan.t
            )));
        }
        total += ln_poisson(z.k_b, theta.lambda_b);
        total += z
            .c_s
            .iter()
            .map(|&s| ln_bernoulli(s, theta.p_s))
            .sum::<f64>();
        total += z
            .c_d
            .iter()
            .map(|&d| ln_bernoulli(d, theta.p_d))
            .sum::<f64>();
        let k_f = z.k_f;
        total += ln_poisson(k_f, theta.lambda_f) + ln_factorial(k_f)
            - ln_factorial(scan.len())
            - k_f as f64 * ln_vol;

        let mut preds: Vec<GaussianMoments> = filts
            .iter()
            .zip(&z.c_s)
            .filter(|(_, &s)| s)
            .map(|(f, _)| kalman::predict(f, psi))
            .collect();
        preds.extend((0..z.k_b).map(|_| GaussianMoments::prior(psi)));
        let obs = z.observation_of_targets();
        let mut next = Vec::with_capacity(preds.len());
        for (pred, o) in preds.iter().zip(&obs) {
            let y = o.map(|j| &scan.points[j]);
            let (filt, ll) = kalman::update(pred, y, psi)?;
            total += ll;
            next.push(filt);
        }
        filts = next;
    }
    Ok(total)
}

/// EM along the true associations: an exact E-step followed by the closed-form
/// M-step, `iters` times. Entry `j` holds `theta_j` and its complete-data
/// log-likelihood.
pub fn oracle_em(
    scans: &[ObservationScan],
    truth: &GroundTruth,
    theta0: &CvParams,
    iters: usize,
    opts: &MStepOptions,
) -> Result<EstimateTrace> {
    truth.validate_against(scans)?;
    let records = &truth.records;
    let mut theta = *theta0;
    let mut trace = EstimateTrace::default();
    trace.push(0, theta, Some(joint_loglik(scans, records, &theta)?));
    for j in 1..=iters {
        let model = theta.assemble()?;
        let stats = expectations_given_associations(scans, records, &model.glssm)
            .map_err(|e| e.context(format!("iteration {j}")))?;
        theta = lambda_mstep_with(&stats, &theta, opts);
        trace.push(j, theta, Some(joint_loglik(scans, records, &theta)?));
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaemConfig {
    pub smc: SmcConfig,
    pub schedule: StepSizeSchedule,
    pub iters: usize,
    pub mstep: MStepOptions,
    pub population: PopulationMode,
}

/// One particle-filter pass over all scans at fixed parameters; returns the
/// final particle set.
fn smc_pass(
    scans: &[ObservationScan],
    cv: &CvParams,
    smc: &SmcConfig,
    population: &PopulationMode,
    epoch: u64,
    masks: Vec<StatMask>,
) -> Result<ParticleSet> {
    let theta = cv.assemble()?;
    let blends = vec![Blend::PLAIN; masks.len()];
    let mut set = ParticleSet::new(smc.n_particles, 4, 2, masks);
    for scan in scans {
        let bd = population.birth_death(set.time() + 1, population.k_x_prev(&set))?;
        let opts = StepOptions {
            epoch,
            blends: &blends,
            birth_death: bd.as_ref(),
        };
        smc_step(&mut set, scan, &theta, smc, &opts)?;
    }
    Ok(set)
}

/// Batch stochastic-approximation EM. Iteration `j` filters all scans at
/// `theta_j`, blends the particle estimate of the expected statistics into
/// each bank's running average with its own step size, and maximizes.
///
/// Entry `j` of the trace holds `theta_j` with the particle-filter estimate of
/// `ln p_{theta_j}(y_{1:n})` from the pass run at it; the final entry has no
/// likelihood.
pub fn saem_batch(
    scans: &[ObservationScan],
    theta0: &CvParams,
    cfg: &SaemConfig,
) -> Result<EstimateTrace> {
    if cfg.iters == 0 {
        return Err(MttError::InvalidParameter(
            "SAEM needs at least one iteration".into(),
        ));
    }
    if scans.is_empty() {
        return Err(MttError::InvalidParameter("no scans to fit".into()));
    }
    cfg.smc.validate()?;
    cfg.schedule.validate()?;
    let banks = cfg.schedule.banks(&estimated_params(&cfg.mstep));
    let mut averaged: Vec<SufficientStatSet> = banks
        .iter()
        .map(|_| SufficientStatSet::zeros(4, 2))
        .collect();
    let mut theta = *theta0;
    let mut entries: Vec<(CvParams, Option<f64>)> = Vec::with_capacity(cfg.iters + 1);
    for j in 1..=cfg.iters {
        let set = smc_pass(
            scans,
            &theta,
            &cfg.smc,
            &cfg.population,
            j as u64,
            vec![StatMask::ALL],
        )
        .map_err(|e| e.context(format!("SAEM iteration {j}")))?;
        let fresh = set.weighted_totals().pop().expect("one statistics bank");
        for (bank, avg) in banks.iter().zip(averaged.iter_mut()) {
            let g = StepSizeSchedule::gamma(bank.exponent, j);
            avg.blend_with(&fresh, Blend::stochastic(g));
        }
        entries.push((theta, Some(set.log_norm_const)));
        theta = merged_mstep(&banks, &averaged, &theta, &cfg.mstep);
    }
    entries.push((theta, None));
    let mut trace = EstimateTrace::default();
    for (j, (th, ll)) in entries.into_iter().enumerate() {
        trace.push(j, th, ll);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub smc: SmcConfig,
    pub schedule: StepSizeSchedule,
    pub mstep: MStepOptions,
    pub population: PopulationMode,
}

/// Result of an online run: the trace plus the final averaged statistics of
/// every bank.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome {
    pub trace: EstimateTrace,
    pub banks: Vec<RateBank>,
    pub stats: Vec<SufficientStatSet>,
}

/// SMC online EM: one filter pass in which every step discounts the smoothed
/// statistics by the step size and, from the burn-in time on, re-estimates
/// the parameters. Entry `t` holds `theta_{t+1}` and the running estimate of
/// `ln p(y_{1:t})` under the parameter sequence used so far.
pub fn online_em(
    scans: &[ObservationScan],
    theta0: &CvParams,
    cfg: &OnlineConfig,
) -> Result<EstimateTrace> {
    online_em_detailed(scans, theta0, cfg).map(|o| o.trace)
}

pub fn online_em_detailed(
    scans: &[ObservationScan],
    theta0: &CvParams,
    cfg: &OnlineConfig,
) -> Result<OnlineOutcome> {
    if scans.is_empty() {
        return Err(MttError::InvalidParameter("no scans to fit".into()));
    }
    if cfg.schedule.burn_in == 0 {
        return Err(MttError::InvalidParameter(
            "burn-in must be at least 1".into(),
        ));
    }
    cfg.smc.validate()?;
    cfg.schedule.validate()?;
    let banks = cfg.schedule.banks(&estimated_params(&cfg.mstep));
    let masks = banks.iter().map(|b| b.mask).collect();
    let mut set = ParticleSet::new(cfg.smc.n_particles, 4, 2, masks);
    let mut theta = *theta0;
    let mut model = theta.assemble()?;
    let mut trace = EstimateTrace::default();
    trace.push(0, theta, None);
    for (idx, scan) in scans.iter().enumerate() {
        let t = idx + 1;
        let blends: Vec<Blend> = banks
            .iter()
            .map(|b| Blend::stochastic(StepSizeSchedule::gamma(b.exponent, t)))
            .collect();
        let bd = cfg
            .population
            .birth_death(t, cfg.population.k_x_prev(&set))?;
        let opts = StepOptions {
            epoch: 0,
            blends: &blends,
            birth_death: bd.as_ref(),
        };
        smc_step(&mut set, scan, &model, &cfg.smc, &opts)?;
        if t >= cfg.schedule.burn_in {
            let stats = set.weighted_totals();
            theta = merged_mstep(&banks, &stats, &theta, &cfg.mstep);
            model = theta
                .assemble()
                .map_err(|e| e.context(format!("M-step at t={t}")))?;
        }
        trace.push(t, theta, Some(set.log_norm_const));
    }
    let stats = set.weighted_totals();
    Ok(OnlineOutcome {
        trace,
        banks,
        stats,
    })
}

/// Filter summary of one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub t: usize,
    /// Posterior mean of the number of live targets.
    pub k_hat: f64,
    pub ess: f64,
    /// Running estimate of `ln p(y_{1:t})`.
    pub loglik: f64,
}

/// Run the association filter at fixed parameters without smoothing
/// statistics.
pub fn track(
    scans: &[ObservationScan],
    cv: &CvParams,
    smc: &SmcConfig,
    population: &PopulationMode,
) -> Result<Vec<TrackStep>> {
    smc.validate()?;
    let theta = cv.assemble()?;
    let mut set = ParticleSet::new(smc.n_particles, 4, 2, Vec::new());
    let mut out = Vec::with_capacity(scans.len());
    for scan in scans {
        let t = set.time() + 1;
        let bd = population.birth_death(t, population.k_x_prev(&set))?;
        let opts = StepOptions {
            epoch: 0,
            blends: &[],
            birth_death: bd.as_ref(),
        };
        smc_step(&mut set, scan, &theta, smc, &opts)?;
        out.push(TrackStep {
            t,
            k_hat: set.mean_target_count(),
            ess: set.ess(),
            loglik: set.log_norm_const,
        });
    }
    Ok(out)
}

/// Mean absolute difference between estimated and true target counts.
pub fn mean_count_error(steps: &[TrackStep], truth: &GroundTruth) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    let total: f64 = steps
        .iter()
        .zip(&truth.records)
        .map(|(s, z)| (s.k_hat - z.k_x() as f64).abs())
        .sum();
    total / steps.len() as f64
}

/// Likelihood curves of fixed-population online EM runs over candidate
/// target counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub candidates: Vec<usize>,
    /// `curves[c][t-1]` = `ln p(y_{1:t} | K = candidates[c]) / t`.
    pub curves: Vec<Vec<f64>>,
    /// `(t, argmax K)` at every requested checkpoint.
    pub decisions: Vec<(usize, usize)>,
}

/// Run fixed-K online EM for every candidate (in parallel) and compare the
/// time-normalized likelihood estimates at the checkpoints.
pub fn select_k(
    scans: &[ObservationScan],
    candidates: &[usize],
    theta0: &CvParams,
    cfg: &OnlineConfig,
    checkpoints: &[usize],
) -> Result<ModelSelection> {
    if candidates.is_empty() {
        return Err(MttError::InvalidParameter(
            "no candidate target counts".into(),
        ));
    }
    if let Some(&t) = checkpoints.iter().find(|&&t| t == 0 || t > scans.len()) {
        return Err(MttError::InvalidParameter(format!(
            "checkpoint {t} outside 1..={}",
            scans.len()
        )));
    }
    let curves = candidates
        .par_iter()
        .map(|&k| {
            let run = OnlineConfig {
                population: PopulationMode::FixedK(k),
                ..cfg.clone()
            };
            let trace = online_em(scans, theta0, &run).map_err(|e| e.context(format!("K={k}")))?;
            Ok(trace
                .entries
                .iter()
                .skip(1)
                .map(|e| e.loglik.unwrap_or(f64::NEG_INFINITY) / e.index as f64)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let decisions = checkpoints
        .iter()
        .map(|&t| {
            let best = (0..candidates.len())
                .max_by(|&a, &b| curves[a][t - 1].total_cmp(&curves[b][t - 1]))
                .expect("nonempty candidates");
            (t, candidates[best])
        })
        .collect();
    Ok(ModelSelection {
        candidates: candidates.to_vec(),
        curves,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cv_assemble, lambda_mstep};
    use crate::simulator::{simulate, simulate_fixed_k};
    use crate::testutil::{dense_single_track_em, track_oracle_sums};

    fn paper_cv() -> CvParams {
        CvParams {
            lambda_b: 0.2,
            lambda_f: 10.0,
            p_d: 0.9,
            p_s: 0.95,
            mu_bx: 0.0,
            mu_by: 0.0,
            sigma_bp2: 25.0,
            sigma_bv2: 4.0,
            sigma_xp2: 0.0,
            sigma_xv2: 0.0625,
            sigma_y2: 4.0,
            delta: 1.0,
            kappa: 100.0,
            rho: 1.0,
        }
    }

    #[test]
    fn step_sizes() {
        assert_eq!(StepSizeSchedule::gamma(0.0, 17), 1.0);
        assert!((StepSizeSchedule::gamma(0.8, 32) - 32f64.powf(-0.8)).abs() < 1e-15);
        for alpha in [0.55, 0.8, 1.0] {
            let (mut s1, mut s2) = (0.0, 0.0);
            for j in 1..=1_000_000 {
                let g = StepSizeSchedule::gamma(alpha, j);
                s1 += g;
                s2 += g * g;
            }
            // Divergent sum, convergent sum of squares (bounded by its integral).
            assert!(s1 > 10.0);
            assert!(s2 < 1.0 + 1.0 / (2.0 * alpha - 1.0));
        }
        let bad = StepSizeSchedule {
            alpha: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = StepSizeSchedule::default();
        bad.overrides.insert("sigma_q".into(), 0.8);
        assert!(bad.validate().is_err());
        assert!(StepSizeSchedule::default().validate().is_ok());
        assert!(StepSizeSchedule::unit(1).validate().is_ok());
    }

    #[test]
    fn default_banks_split_velocity_noise() {
        let banks = StepSizeSchedule::default().banks(&estimated_params(&MStepOptions::default()));
        assert_eq!(banks.len(), 2);
        assert_eq!(banks[0].exponent, 0.55);
        assert_eq!(banks[0].params, vec![CvParam::SigmaXv2]);
        assert_eq!(banks[0].mask, StatMask::from_statistics(&[3, 4, 5]));
        assert_eq!(banks[1].mask, StatMask::from_statistics(&[1, 2, 6, 7]));
        assert_eq!(banks[1].params.len(), 9);

        let fixed = StepSizeSchedule::default().banks(&estimated_params(&MStepOptions::fixed_k()));
        assert_eq!(fixed[1].mask, StatMask::from_statistics(&[1, 2]));
    }

    #[test]
    fn merged_mstep_with_one_bank_is_plain_mstep() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 60, 1).unwrap();
        let stats = track_oracle_sums(&theta.glssm, &scans, &truth.records);
        let banks = StepSizeSchedule::unit(1).banks(&estimated_params(&MStepOptions::default()));
        let merged = merged_mstep(
            &banks,
            std::slice::from_ref(&stats),
            &paper_cv(),
            &MStepOptions::default(),
        );
        assert_eq!(merged, lambda_mstep(&stats, &paper_cv()));
    }

    #[test]
    fn oracle_em_is_monotone_and_recovers_counts() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 100, 3).unwrap();
        let start = CvParams {
            lambda_b: 0.5,
            lambda_f: 5.0,
            p_d: 0.6,
            p_s: 0.8,
            sigma_xv2: 0.3,
            sigma_y2: 10.0,
            ..paper_cv()
        };
        let trace = oracle_em(&scans, &truth, &start, 50, &MStepOptions::default()).unwrap();
        assert_eq!(trace.len(), 51);
        for w in trace.entries.windows(2) {
            let (a, b) = (w[0].loglik.unwrap(), w[1].loglik.unwrap());
            assert!(b >= a - 1e-9 * a.abs().max(1.0), "{a} -> {b}");
        }
        let last = trace.final_theta().unwrap();
        let r = &truth.records;
        let kd: usize = r.iter().map(|z| z.k_d()).sum();
        let kx: usize = r.iter().map(|z| z.k_x()).sum();
        assert!((last.p_d - kd as f64 / kx as f64).abs() < 1e-9);
    }

    #[test]
    fn oracle_em_rejects_mismatched_truth() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 20, 3).unwrap();
        let err = oracle_em(
            &scans[..10],
            &truth,
            &paper_cv(),
            1,
            &MStepOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn oracle_em_from_truth_does_not_decrease_likelihood() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 80, 9).unwrap();
        let trace = oracle_em(&scans, &truth, &paper_cv(), 1, &MStepOptions::default()).unwrap();
        assert!(trace.entries[1].loglik.unwrap() >= trace.entries[0].loglik.unwrap());
    }

    fn single_target_cv() -> CvParams {
        CvParams {
            lambda_b: 0.0,
            lambda_f: 1e-9,
            p_d: 1.0 - 1e-9,
            p_s: 1.0,
            sigma_xv2: 0.05,
            sigma_y2: 2.0,
            kappa: 1e6,
            ..paper_cv()
        }
    }

    #[test]
    fn saem_on_a_lone_target_is_single_model_em() {
        let cv = single_target_cv();
        let theta = cv_assemble(&cv).unwrap();
        let (scans, truth) = simulate_fixed_k(&theta, 1, 60, 5).unwrap();
        assert!(truth.records.iter().all(|z| z.k_d() == 1 && z.k_f == 0));
        let start = CvParams {
            sigma_xv2: 0.4,
            sigma_y2: 9.0,
            ..cv
        };
        let cfg = SaemConfig {
            smc: SmcConfig {
                n_particles: 4,
                l_best: 3,
                ess_threshold: 0.5,
                seed: 2,
            },
            schedule: StepSizeSchedule::unit(1),
            iters: 8,
            mstep: MStepOptions::fixed_k(),
            population: PopulationMode::FixedK(1),
        };
        let trace = saem_batch(&scans, &start, &cfg).unwrap();
        let ys: Vec<_> = scans.iter().map(|s| s.points[0].clone()).collect();
        let psi0 = cv_assemble(&start).unwrap().glssm;
        let oracle = dense_single_track_em(&psi0, &ys, 8);
        for (entry, (sxv, sy)) in trace.entries.iter().skip(1).zip(&oracle) {
            let th = entry.theta;
            assert!(
                (th.sigma_xv2 - sxv).abs() < 1e-6 * sxv,
                "{} vs {sxv}",
                th.sigma_xv2
            );
            assert!(
                (th.sigma_y2 - sy).abs() < 1e-6 * sy,
                "{} vs {sy}",
                th.sigma_y2
            );
        }
    }

    #[test]
    fn unit_step_saem_forgets_history() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, _) = simulate(&theta, 15, 4).unwrap();
        let cfg = SaemConfig {
            smc: SmcConfig {
                n_particles: 10,
                ..SmcConfig::default()
            },
            schedule: StepSizeSchedule::unit(1),
            iters: 3,
            mstep: MStepOptions::default(),
            population: PopulationMode::Sampled,
        };
        let trace = saem_batch(&scans, &paper_cv(), &cfg).unwrap();
        // Re-running the third pass by hand from theta_2 reproduces theta_3.
        let th2 = trace.entries[2].theta;
        let set = smc_pass(
            &scans,
            &th2,
            &cfg.smc,
            &cfg.population,
            3,
            vec![StatMask::ALL],
        )
        .unwrap();
        let s = set.weighted_totals().pop().unwrap();
        let expect = lambda_mstep_with(&s, &th2, &cfg.mstep);
        assert_eq!(trace.entries[3].theta, expect);
        assert_eq!(trace.entries[2].loglik, Some(set.log_norm_const));
        assert!(trace.entries[3].loglik.is_none());
    }

    #[test]
    fn burn_in_longer_than_data_keeps_theta0() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, _) = simulate(&theta, 12, 4).unwrap();
        let cfg = OnlineConfig {
            smc: SmcConfig {
                n_particles: 10,
                ..SmcConfig::default()
            },
            schedule: StepSizeSchedule {
                burn_in: 100,
                ..Default::default()
            },
            mstep: MStepOptions::default(),
            population: PopulationMode::Sampled,
        };
        let trace = online_em(&scans, &paper_cv(), &cfg).unwrap();
        assert_eq!(trace.len(), 13);
        assert!(trace.entries.iter().all(|e| e.theta == paper_cv()));
        // The likelihood is accumulated regardless.
        assert!(trace
            .entries
            .iter()
            .skip(1)
            .all(|e| e.loglik.unwrap().is_finite()));
    }

    #[test]
    fn harmonic_online_averages_of_count_statistics() {
        // Without births the association is determined, so the z-only
        // statistics are exact: with gamma_t = 1/t they are time averages.
        let cv = CvParams {
            lambda_b: 0.0,
            ..paper_cv()
        };
        let theta = cv_assemble(&cv).unwrap();
        let (scans, truth) = simulate(&theta, 40, 8).unwrap();
        let cfg = OnlineConfig {
            smc: SmcConfig {
                n_particles: 3,
                ..SmcConfig::default()
            },
            schedule: StepSizeSchedule {
                alpha: 1.0,
                overrides: BTreeMap::new(),
                burn_in: 1000,
            },
            mstep: MStepOptions::default(),
            population: PopulationMode::Sampled,
        };
        let out = online_em_detailed(&scans, &cv, &cfg).unwrap();
        let batch = track_oracle_sums(&theta.glssm, &scans, &truth.records);
        let s = &out.stats[0];
        let n = scans.len() as f64;
        assert!((s.s14 - batch.s14 / n).abs() < 1e-12);
        assert!((s.s15 - 1.0).abs() < 1e-12);
        assert!((&s.s8 - &batch.s8 / n).amax() < 1e-12 * (1.0 + batch.s8.amax()));
    }

    #[test]
    fn known_birth_death_must_cover_every_step() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 10, 4).unwrap();
        let cfg = OnlineConfig {
            smc: SmcConfig {
                n_particles: 5,
                ..SmcConfig::default()
            },
            schedule: StepSizeSchedule::default(),
            mstep: MStepOptions::default(),
            population: PopulationMode::known_from(&truth.records[..5]),
        };
        assert!(matches!(
            online_em(&scans, &paper_cv(), &cfg),
            Err(MttError::Structural(_))
        ));
        let ok = OnlineConfig {
            population: PopulationMode::known_from(&truth.records),
            ..cfg
        };
        let trace = online_em(&scans, &paper_cv(), &ok).unwrap();
        assert_eq!(trace.len(), 11);
    }

    #[test]
    fn tracking_at_the_truth_follows_the_target_count() {
        let theta = cv_assemble(&paper_cv()).unwrap();
        let (scans, truth) = simulate(&theta, 100, 1).unwrap();
        let smc = SmcConfig {
            n_particles: 200,
            ..SmcConfig::default()
        };
        let steps = track(&scans, &paper_cv(), &smc, &PopulationMode::Sampled).unwrap();
        assert_eq!(steps.len(), 100);
        assert!(mean_count_error(&steps, &truth) < 1.0);
        let known = track(
            &scans,
            &paper_cv(),
            &smc,
            &PopulationMode::known_from(&truth.records),
        )
        .unwrap();
        assert!(mean_count_error(&known, &truth) < 1e-9);
    }

    #[test]
    fn clutter_only_data_prefers_no_targets() {
        let cv = CvParams {
            lambda_b: 0.0,
            p_s: 1.0,
            rho: 0.99,
            ..paper_cv()
        };
        let theta = cv.assemble().unwrap();
        let (scans, _) = simulate_fixed_k(&theta, 0, 60, 3).unwrap();
        let cfg = OnlineConfig {
            smc: SmcConfig {
                n_particles: 20,
                ..SmcConfig::default()
            },
            schedule: StepSizeSchedule {
                burn_in: 1000,
                ..Default::default()
            },
            mstep: MStepOptions::fixed_k(),
            population: PopulationMode::Sampled,
        };
        let sel = select_k(&scans, &[0, 1, 2], &cv, &cfg, &[30, 60]).unwrap();
        assert_eq!(sel.decisions, vec![(30, 0), (60, 0)]);
        // K = 0 reproduces the closed-form clutter likelihood.
        let exact: f64 = scans
            .iter()
            .map(|s| {
                let k = s.len();
                ln_poisson(k, cv.lambda_f) - k as f64 * theta.region_volume().ln()
            })
            .sum();
        assert!((sel.curves[0][59] * 60.0 - exact).abs() < 1e-9 * exact.abs());
    }
}
