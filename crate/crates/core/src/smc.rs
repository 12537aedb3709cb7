//! Particle filter over association sequences.
//!
//! Each particle carries one hypothesis `z_{1:t}` together with the Kalman
//! filters and smoothing recursions of its targets. A step resamples (when
//! the effective sample size is low), then extends every particle with a
//! proposal that draws births and survivals from the prior and picks an
//! association among the L best assignments with probability proportional to
//! their likelihood.
//!
//! The incremental weight of that proposal is
//!
//! ```text
//! ln w = -lambda_f + k_y ln(lambda_f/|Y|) - ln k_y! + k_x ln(|Y|/lambda_f)
//!        + logsumexp_{j <= L} d(D, alpha_j)
//! ```
//!
//! The birth/survival prior cancels between target and proposal; the first
//! three terms are common to all particles but are kept so that the running
//! normalizing constant is the marginal likelihood of the scans.

use rand::Rng;
use rayon::prelude::*;

use crate::assignment::{build_cost_matrix, decode_association, murty_lbest};
use crate::error::{MttError, Result};
use crate::kalman::{self, GaussianMoments, PredictiveDensity};
use crate::model::ModelParams;
use crate::rng::{self, purpose, StreamRng};
use crate::simulator::{sample_poisson, AssociationRecord, ObservationScan};
use crate::smoothing::{Blend, MttState, StatMask, SufficientStatSet};

/// One weighted association hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: MttState,
    /// Association sampled at the latest step.
    pub record: Option<AssociationRecord>,
    /// Normalized log weight.
    pub log_weight: f64,
}

/// Weighted particle population and the running log marginal likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub log_norm_const: f64,
    t: usize,
}

impl ParticleSet {
    /// `n` empty-scene particles keeping one statistics bank per mask.
    pub fn new(n: usize, dx: usize, dy: usize, masks: Vec<StatMask>) -> Self {
        ParticleSet::from_state(MttState::new(dx, dy, masks), n)
    }

    /// `n` equally weighted copies of `state`.
    pub fn from_state(state: MttState, n: usize) -> Self {
        assert!(n > 0, "a particle set needs at least one particle");
        let t = state.time();
        let lw = -(n as f64).ln();
        ParticleSet {
            particles: vec![
                Particle {
                    state,
                    record: None,
                    log_weight: lw,
                };
                n
            ],
            log_norm_const: 0.0,
            t,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of completed steps.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights())
    }

    /// Posterior mean number of alive targets.
    pub fn mean_target_count(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.log_weight.exp() * p.state.k_x() as f64)
            .sum()
    }

    /// Weighted average over particles of every bank's expected statistics.
    pub fn weighted_totals(&self) -> Vec<SufficientStatSet> {
        let first = &self.particles[0].state;
        let (dx, dy) = first
            .acc
            .banks
            .first()
            .map(|b| (b.dx(), b.dy()))
            .unwrap_or((0, 0));
        let mut out = vec![SufficientStatSet::zeros(dx, dy); first.acc.banks.len()];
        for p in &self.particles {
            let w = p.log_weight.exp();
            if w > 0.0 {
                p.state.add_totals_into(w, &mut out);
            }
        }
        out
    }
}

/// Known births and survivals for one step, replacing the prior draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BirthDeath {
    pub c_s: Vec<bool>,
    pub k_b: usize,
}

impl BirthDeath {
    pub fn from_record(z: &AssociationRecord) -> Self {
        BirthDeath {
            c_s: z.c_s.clone(),
            k_b: z.k_b,
        }
    }

    /// Fixed population of `k` targets: all born at the first step, none die.
    pub fn fixed(k: usize, k_x_prev: usize, t: usize) -> Self {
        BirthDeath {
            c_s: vec![true; k_x_prev],
            k_b: if t == 1 { k } else { 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub n_particles: usize,
    pub l_best: usize,
    /// Resample when the ESS drops below this fraction of the particle count.
    pub ess_threshold: f64,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n_particles: 200,
            l_best: 10,
            ess_threshold: 0.5,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.l_best == 0 {
            return Err(MttError::InvalidParameter(
                "particle count and L must be positive".into(),
            ));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(MttError::InvalidParameter(format!(
                "ESS threshold must lie in (0, 1], got {}",
                self.ess_threshold
            )));
        }
        Ok(())
    }
}

/// Per-step inputs beyond the scan and parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions<'a> {
    /// Distinguishes random streams of repeated passes over the same data.
    pub epoch: u64,
    /// Accumulation weights, one per statistics bank.
    pub blends: &'a [Blend],
    /// Known births and survivals, applied to every particle.
    pub birth_death: Option<&'a BirthDeath>,
}

/// Effective sample size `1 / sum w_i^2` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling indices for normalized weights and offset `u` in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let point = (i as f64 + u) / n as f64;
        while point > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Systematic resampling if the ESS is below `threshold * N`. Returns the
/// ancestry map (the identity when no resampling happens).
pub fn resample(set: &mut ParticleSet, threshold: f64, rng: &mut StreamRng) -> Vec<usize> {
    let n = set.len();
    let w = set.weights();
    if ess(&w) >= threshold * n as f64 {
        return (0..n).collect();
    }
    let pi = systematic_indices(&w, rng.random::<f64>());
    let lw = -(n as f64).ln();
    // The indices are nondecreasing: clone all but the last copy of each
    // ancestor, which takes the original.
    let mut old: Vec<Option<Particle>> = std::mem::take(&mut set.particles)
        .into_iter()
        .map(Some)
        .collect();
    set.particles = pi
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let last = pi.get(k + 1) != Some(&j);
            let p = if last {
                old[j].take().expect("ancestor used after its last copy")
            } else {
                old[j].clone().expect("ancestor used after its last copy")
            };
            Particle {
                log_weight: lw,
                ..p
            }
        })
        .collect();
    pi
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Extend one particle by a step and return its incremental log weight.
///
/// When no assignment is feasible (possible only with `p_d = 1`), the
/// particle is returned unchanged with weight `-inf`.
pub fn propose_step(
    mut p: Particle,
    scan: &ObservationScan,
    theta: &ModelParams,
    l_best: usize,
    opts: &StepOptions<'_>,
    rng: &mut StreamRng,
) -> Result<(Particle, f64)> {
    let psi = &theta.glssm;
    let k_prev = p.state.k_x();
    let (c_s, k_b) = match opts.birth_death {
        Some(bd) => {
            if bd.c_s.len() != k_prev {
                return Err(MttError::Structural(format!(
                    "known survivals for {} targets but the particle has {k_prev}",
                    bd.c_s.len()
                )));
            }
            (bd.c_s.clone(), bd.k_b)
        }
        None => {
            let k_b = sample_poisson(rng, theta.lambda_b);
            let c_s = (0..k_prev).map(|_| rng.random_bool(theta.p_s)).collect();
            (c_s, k_b)
        }
    };

    let mut preds: Vec<GaussianMoments> = Vec::new();
    for (target, &s) in p.state.targets.iter().zip(&c_s) {
        if s {
            preds.push(kalman::predict(&target.filt, psi));
        }
    }
    preds.extend((0..k_b).map(|_| GaussianMoments::prior(psi)));
    let dens = preds
        .iter()
        .map(|m| PredictiveDensity::new(m, psi))
        .collect::<Result<Vec<_>>>()?;

    let volume = theta.region_volume();
    let d = build_cost_matrix(&dens, scan, theta.p_d, theta.lambda_f, volume);
    let ranked = murty_lbest(&d, l_best);
    if ranked.is_empty() {
        return Ok((p, f64::NEG_INFINITY));
    }
    let lse = log_sum_exp(ranked.iter().map(|a| a.score));
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut pick = ranked.len() - 1;
    for (j, a) in ranked.iter().enumerate() {
        cum += (a.score - lse).exp();
        if u < cum {
            pick = j;
            break;
        }
    }

    let k_y = scan.len();
    let k_x = preds.len();
    let (c_d, a) = decode_association(&ranked[pick].alpha, k_y);
    let k_f = k_y - a.len();
    let z = AssociationRecord {
        c_s,
        c_d,
        k_b,
        k_f,
        a,
    };
    let lf = theta.lambda_f;
    let log_incr = -lf + k_y as f64 * (lf / volume).ln() - ln_factorial(k_y)
        + k_x as f64 * (volume / lf).ln()
        + lse;

    p.state.step(&z, scan, psi, opts.blends, Some(&preds))?;
    p.record = Some(z);
    Ok((p, log_incr))
}

/// One resample-then-propose step of the whole particle set.
pub fn smc_step(
    set: &mut ParticleSet,
    scan: &ObservationScan,
    theta: &ModelParams,
    config: &SmcConfig,
    opts: &StepOptions<'_>,
) -> Result<()> {
    if theta.lambda_f.is_nan() || theta.lambda_f <= 0.0 {
        return Err(MttError::InvalidParameter(format!(
            "the association proposal needs a positive clutter rate, got {}",
            theta.lambda_f
        )));
    }
    let t = set.t + 1;
    let seed = config.seed;
    let mut rs = rng::stream(seed, &[purpose::RESAMPLE, opts.epoch, t as u64]);
    resample(set, config.ess_threshold, &mut rs);

    let particles = std::mem::take(&mut set.particles);
    let stepped: Vec<Result<(Particle, f64)>> = particles
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.log_weight == f64::NEG_INFINITY {
                return Ok((p, f64::NEG_INFINITY));
            }
            let mut rng = rng::stream(seed, &[purpose::PROPOSE, opts.epoch, t as u64, i as u64]);
            propose_step(p, scan, theta, config.l_best, opts, &mut rng)
                .map_err(|e| e.context(format!("particle {i}")))
        })
        .collect();

    let mut out = Vec::with_capacity(stepped.len());
    for r in stepped {
        let (mut p, incr) = r.map_err(|e| e.context(format!("t={t}")))?;
        p.log_weight += incr;
        out.push(p);
    }
    let lse = log_sum_exp(out.iter().map(|p| p.log_weight));
    if !lse.is_finite() {
        return Err(MttError::FilterCollapse { t });
    }
    for p in &mut out {
        p.log_weight -= lse;
    }
    set.particles = out;
    set.log_norm_const += lse;
    set.t = t;
    Ok(())
}

/// Running estimate of `ln p(y_{1:t})`.
pub fn log_marginal_likelihood(set: &ParticleSet) -> f64 {
    set.log_norm_const
}
