//! Independent reference computations shared by unit and integration tests.
//!
//! Everything here is deliberately naive: dense joint Gaussians instead of
//! recursions, exhaustive enumeration instead of ranking.
#![allow(dead_code)]

use std::collections::HashMap;

use mtt_core::kalman::{self, GaussianMoments};
use mtt_core::model::{GlssmParams, ModelParams};
use mtt_core::simulator::{AssociationRecord, ObservationScan};
use mtt_core::smoothing::SufficientStatSet;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * gauss(rng))
}

/// Well-conditioned random symmetric positive definite matrix.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, d, d, 1.0 / (d as f64).sqrt());
    &a * a.transpose() + DMatrix::identity(d, d) * 0.2
}

/// Random GLSSM with a mildly contracting-to-mildly-expanding transition and
/// positive definite noise covariances.
pub fn random_glssm<R: Rng>(rng: &mut R, dx: usize, dy: usize) -> GlssmParams {
    let f = random_matrix(rng, dx, dx, 0.6 / (dx as f64).sqrt());
    let g = random_matrix(rng, dy, dx, 1.0);
    let mu_b = DVector::from_fn(dx, |_, _| gauss(rng));
    GlssmParams::new(
        mu_b,
        random_spd(rng, dx),
        f,
        g,
        random_spd(rng, dx),
        random_spd(rng, dy),
    )
    .expect("valid random model")
}

pub fn random_moments<R: Rng>(rng: &mut R, d: usize) -> GaussianMoments {
    GaussianMoments::new(DVector::from_fn(d, |_, _| gauss(rng)), random_spd(rng, d))
}

/// Posterior of the stacked trajectory `(x_1, ..., x_n)` of one target born at
/// time 1, by conditioning the dense joint Gaussian on the observed `y_t`.
pub fn joint_smoother(
    psi: &GlssmParams,
    ys: &[Option<&DVector<f64>>],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = ys.len();
    let dx = psi.dx();
    let dy = psi.dy();
    let mut mean = DVector::zeros(n * dx);
    let mut cov = DMatrix::zeros(n * dx, n * dx);
    mean.rows_mut(0, dx).copy_from(&psi.mu_b);
    cov.view_mut((0, 0), (dx, dx)).copy_from(&psi.sigma_b);
    for t in 1..n {
        let prev = mean.rows((t - 1) * dx, dx).into_owned();
        mean.rows_mut(t * dx, dx).copy_from(&(&psi.f * prev));
        // Cov(x_t, x_s) = F Cov(x_{t-1}, x_s) for s < t.
        for s in 0..t {
            let c = &psi.f * cov.view(((t - 1) * dx, s * dx), (dx, dx));
            cov.view_mut((t * dx, s * dx), (dx, dx)).copy_from(&c);
            cov.view_mut((s * dx, t * dx), (dx, dx))
                .copy_from(&c.transpose());
        }
        let c =
            &psi.f * cov.view(((t - 1) * dx, (t - 1) * dx), (dx, dx)) * psi.f.transpose() + &psi.w;
        cov.view_mut((t * dx, t * dx), (dx, dx)).copy_from(&c);
    }

    let observed: Vec<usize> = (0..n).filter(|&t| ys[t].is_some()).collect();
    if observed.is_empty() {
        return (mean, cov);
    }
    let m = observed.len() * dy;
    let mut h = DMatrix::zeros(m, n * dx);
    let mut r = DMatrix::zeros(m, m);
    let mut y = DVector::zeros(m);
    for (k, &t) in observed.iter().enumerate() {
        h.view_mut((k * dy, t * dx), (dy, dx)).copy_from(&psi.g);
        r.view_mut((k * dy, k * dy), (dy, dy)).copy_from(&psi.v);
        y.rows_mut(k * dy, dy).copy_from(ys[t].unwrap());
    }
    let s = &h * &cov * h.transpose() + r;
    let chol = s
        .cholesky()
        .expect("innovation covariance is positive definite");
    let ch = &cov * h.transpose();
    let gain = chol.solve(&ch.transpose()).transpose();
    let post_mean = &mean + &gain * (y - &h * &mean);
    let post_cov = &cov - &gain * ch.transpose();
    (post_mean, post_cov)
}

/// Expected state statistics `S1..S7` of one target observed over its whole
/// life, computed from the joint smoother. The remaining statistics are zero.
pub fn single_track_stats(psi: &GlssmParams, ys: &[Option<DVector<f64>>]) -> SufficientStatSet {
    let dx = psi.dx();
    let dy = psi.dy();
    let refs: Vec<_> = ys.iter().map(|y| y.as_ref()).collect();
    let (mean, cov) = joint_smoother(psi, &refs);
    let cross = |s: usize, t: usize| -> DMatrix<f64> {
        cov.view((s * dx, t * dx), (dx, dx)).into_owned()
            + mean.rows(s * dx, dx) * mean.rows(t * dx, dx).transpose()
    };
    let mut out = SufficientStatSet::zeros(dx, dy);
    for (t, y) in ys.iter().enumerate() {
        if let Some(y) = y {
            out.s1 += cross(t, t);
            out.s2 += mean.rows(t * dx, dx) * y.transpose();
        }
        if t > 0 {
            out.s3 += cross(t - 1, t - 1);
            out.s4 += cross(t, t);
            out.s5 += cross(t - 1, t);
        }
    }
    out.s6 += mean.rows(0, dx);
    out.s7 += cross(0, 0);
    out
}

/// One target's life extracted from association records.
#[derive(Debug, Clone)]
pub struct Track {
    pub born: usize,
    pub observations: Vec<Option<DVector<f64>>>,
}

/// Split a record sequence into per-target observation histories.
pub fn decompose_tracks(scans: &[ObservationScan], records: &[AssociationRecord]) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut alive: Vec<usize> = Vec::new();
    for (t, (scan, z)) in scans.iter().zip(records).enumerate() {
        assert_eq!(z.c_s.len(), alive.len());
        let mut next: Vec<usize> = alive
            .iter()
            .zip(&z.c_s)
            .filter(|(_, &s)| s)
            .map(|(&id, _)| id)
            .collect();
        for _ in 0..z.k_b {
            tracks.push(Track {
                born: t + 1,
                observations: Vec::new(),
            });
            next.push(tracks.len() - 1);
        }
        for (&id, obs) in next.iter().zip(z.observation_of_targets()) {
            tracks[id]
                .observations
                .push(obs.map(|j| scan.points[j].clone()));
        }
        alive = next;
    }
    tracks
}

/// Expected statistics given the associations, as a sum of independent
/// single-target smoothers plus direct association counts.
pub fn track_oracle_sums(
    psi: &GlssmParams,
    scans: &[ObservationScan],
    records: &[AssociationRecord],
) -> SufficientStatSet {
    let mut out = SufficientStatSet::zeros(psi.dx(), psi.dy());
    for track in decompose_tracks(scans, records) {
        out.add_scaled(&single_track_stats(psi, &track.observations), 1.0);
    }
    for (scan, z) in scans.iter().zip(records) {
        for &j in &z.a {
            out.s8 += &scan.points[j] * scan.points[j].transpose();
        }
        out.s9 += z.k_d() as f64;
        out.s10 += z.k_x() as f64;
        out.s11 += z.k_s() as f64;
        out.s12 += z.k_x_prev() as f64;
        out.s13 += z.k_b as f64;
        out.s14 += z.k_f as f64;
        out.s15 += 1.0;
    }
    out
}

/// Permutation-invariant sum: add the terms in ascending order.
pub fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}

/// Every injective row-to-column map with all entries finite, best first;
/// ties are broken by lexicographically smallest column vector.
pub fn enumerate_assignments(d: &DMatrix<f64>) -> Vec<(f64, Vec<usize>)> {
    fn rec(
        d: &DMatrix<f64>,
        row: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        out: &mut Vec<(f64, Vec<usize>)>,
    ) {
        if row == d.nrows() {
            let terms = cur.iter().enumerate().map(|(i, &j)| d[(i, j)]).collect();
            out.push((canonical_sum(terms), cur.clone()));
            return;
        }
        for j in 0..d.ncols() {
            if !used[j] && d[(row, j)].is_finite() {
                used[j] = true;
                cur.push(j);
                rec(d, row + 1, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(d, 0, &mut vec![false; d.ncols()], &mut Vec::new(), &mut out);
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn ln_poisson(k: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
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

/// Exact posterior of the next association given filter moments of the
/// currently alive targets, by enumerating survivals, births (up to
/// `kb_max`) and every detection/association pattern, each scored with the
/// full generative density of the model.
pub fn exact_step_posterior(
    theta: &ModelParams,
    filts: &[GaussianMoments],
    scan: &ObservationScan,
    kb_max: usize,
) -> HashMap<AssociationRecord, f64> {
    let psi = &theta.glssm;
    let k_prev = filts.len();
    let k_y = scan.len();
    let ln_vol = theta.region_volume().ln();
    let mut entries: Vec<(AssociationRecord, f64)> = Vec::new();

    for mask in 0..(1u32 << k_prev) {
        let c_s: Vec<bool> = (0..k_prev).map(|i| mask & (1 << i) != 0).collect();
        for k_b in 0..=kb_max {
            let mut preds: Vec<GaussianMoments> = filts
                .iter()
                .zip(&c_s)
                .filter(|(_, &s)| s)
                .map(|(f, _)| kalman::predict(f, psi))
                .collect();
            preds.extend((0..k_b).map(|_| GaussianMoments::prior(psi)));
            let prior = ln_poisson(k_b, theta.lambda_b)
                + c_s.iter().map(|&s| ln_bernoulli(s, theta.p_s)).sum::<f64>();

            // obs[k] = Some(j) if target k generated observation j.
            let mut patterns: Vec<Vec<Option<usize>>> = vec![Vec::new()];
            for _ in 0..preds.len() {
                let mut next = Vec::new();
                for pat in &patterns {
                    let mut miss = pat.clone();
                    miss.push(None);
                    next.push(miss);
                    for j in 0..k_y {
                        if !pat.contains(&Some(j)) {
                            let mut hit = pat.clone();
                            hit.push(Some(j));
                            next.push(hit);
                        }
                    }
                }
                patterns = next;
            }
            for pat in patterns {
                let c_d: Vec<bool> = pat.iter().map(|o| o.is_some()).collect();
                let a: Vec<usize> = pat.iter().flatten().copied().collect();
                let k_f = k_y - a.len();
                let mut lp = prior
                    + c_d.iter().map(|&d| ln_bernoulli(d, theta.p_d)).sum::<f64>()
                    + ln_poisson(k_f, theta.lambda_f)
                    + ln_factorial(k_f)
                    - ln_factorial(k_y)
                    - k_f as f64 * ln_vol;
                for (k, o) in pat.iter().enumerate() {
                    if let Some(j) = o {
                        lp += kalman::predictive_loglik(&preds[k], &scan.points[*j], psi)
                            .expect("positive definite innovation");
                    }
                }
                entries.push((
                    AssociationRecord {
                        c_s: c_s.clone(),
                        c_d,
                        k_b,
                        k_f,
                        a,
                    },
                    lp,
                ));
            }
        }
    }
    let m = entries
        .iter()
        .map(|e| e.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = entries.iter().map(|e| (e.1 - m).exp()).sum();
    entries
        .into_iter()
        .map(|(r, lp)| (r, (lp - m).exp() / z))
        .collect()
}

/// Total-variation distance between two discrete distributions.
pub fn total_variation<K: std::hash::Hash + Eq + Clone>(
    p: &HashMap<K, f64>,
    q: &HashMap<K, f64>,
) -> f64 {
    let mut keys: Vec<&K> = p.keys().collect();
    keys.extend(q.keys().filter(|k| !p.contains_key(*k)));
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Exact EM for the variances of a single constant-velocity track observed at
/// every step: each iteration smooths densely and re-estimates the velocity
/// noise and observation noise in closed form. Returns the pair
/// `(sigma_xv2, sigma_y2)` after every iteration.
pub fn dense_single_track_em(
    psi0: &GlssmParams,
    ys: &[DVector<f64>],
    iters: usize,
) -> Vec<(f64, f64)> {
    let dx = psi0.dx();
    let n = ys.len();
    let mut psi = psi0.clone();
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let refs: Vec<_> = ys.iter().map(Some).collect();
        let (mean, cov) = joint_smoother(&psi, &refs);
        let block = |s: usize, t: usize| -> DMatrix<f64> {
            cov.view((s * dx, t * dx), (dx, dx)).into_owned()
                + mean.rows(s * dx, dx) * mean.rows(t * dx, dx).transpose()
        };
        let mut obs_resid = 0.0;
        for (t, y) in ys.iter().enumerate() {
            let xx = block(t, t);
            let x = mean.rows(t * dx, dx);
            let e = y * y.transpose()
                - &psi.g * x * y.transpose()
                - y * x.transpose() * psi.g.transpose()
                + &psi.g * xx * psi.g.transpose();
            obs_resid += e.trace();
        }
        let mut vel_resid = 0.0;
        for t in 1..n {
            // Velocity rows of x_t - F x_{t-1}.
            let mut sel = DMatrix::zeros(2, 2 * dx);
            for k in 0..2 {
                sel[(k, dx + 2 + k)] = 1.0;
                for c in 0..dx {
                    sel[(k, c)] = -psi.f[(2 + k, c)];
                }
            }
            let mut joint = DMatrix::zeros(2 * dx, 2 * dx);
            joint
                .view_mut((0, 0), (dx, dx))
                .copy_from(&block(t - 1, t - 1));
            joint
                .view_mut((0, dx), (dx, dx))
                .copy_from(&block(t - 1, t));
            joint
                .view_mut((dx, 0), (dx, dx))
                .copy_from(&block(t, t - 1));
            joint.view_mut((dx, dx), (dx, dx)).copy_from(&block(t, t));
            vel_resid += (&sel * joint * sel.transpose()).trace();
        }
        let sigma_y2 = obs_resid / (2.0 * n as f64);
        let sigma_xv2 = vel_resid / (2.0 * (n - 1) as f64);
        psi.v = DMatrix::identity(2, 2) * sigma_y2;
        psi.w[(2, 2)] = sigma_xv2;
        psi.w[(3, 3)] = sigma_xv2;
        out.push((sigma_xv2, sigma_y2));
    }
    out
}
