//! Synthetic data from the MTT generative process.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{MttError, Result};
use crate::model::ModelParams;
use crate::rng::{self, purpose, StreamRng};

/// Latent discrete structure of one time step.
///
/// Targets alive at `t` are ordered survivors first (in their previous order),
/// then the births of step `t`. Observation indices in `a` are 0-based
/// positions in the step's scan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssociationRecord {
    /// Survival indicator for each target alive at `t - 1`.
    pub c_s: Vec<bool>,
    /// Detection indicator for each target alive at `t`.
    pub c_d: Vec<bool>,
    pub k_b: usize,
    pub k_f: usize,
    /// Observation index of the k-th detected target.
    pub a: Vec<usize>,
}

impl AssociationRecord {
    pub fn k_x_prev(&self) -> usize {
        self.c_s.len()
    }

    pub fn k_s(&self) -> usize {
        self.c_s.iter().filter(|&&c| c).count()
    }

    pub fn k_x(&self) -> usize {
        self.k_s() + self.k_b
    }

    pub fn k_d(&self) -> usize {
        self.c_d.iter().filter(|&&c| c).count()
    }

    pub fn k_y(&self) -> usize {
        self.k_d() + self.k_f
    }

    /// Previous-step indices of the survivors, increasing.
    pub fn i_s(&self) -> Vec<usize> {
        indices_of(&self.c_s)
    }

    /// Indices of the detected targets, increasing.
    pub fn i_d(&self) -> Vec<usize> {
        indices_of(&self.c_d)
    }

    /// Observation index of every alive target, `None` when undetected.
    pub fn observation_of_targets(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.c_d
            .iter()
            .map(|&d| {
                if d {
                    next += 1;
                    Some(self.a[next - 1])
                } else {
                    None
                }
            })
            .collect()
    }

    /// Check the record's internal invariants.
    pub fn validate(&self) -> Result<()> {
        if self.c_d.len() != self.k_x() {
            return Err(MttError::Structural(format!(
                "c_d has length {} but k_s + k_b = {}",
                self.c_d.len(),
                self.k_x()
            )));
        }
        if self.a.len() != self.k_d() {
            return Err(MttError::Structural(format!(
                "a has length {} but {} targets are detected",
                self.a.len(),
                self.k_d()
            )));
        }
        let k_y = self.k_y();
        let mut seen = vec![false; k_y];
        for &j in &self.a {
            if j >= k_y || seen[j] {
                return Err(MttError::Structural(format!(
                    "association {:?} is not injective into {k_y} observations",
                    self.a
                )));
            }
            seen[j] = true;
        }
        Ok(())
    }
}

fn indices_of(bits: &[bool]) -> Vec<usize> {
    bits.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Unordered measurement set of one time step (`t` is 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationScan {
    pub t: usize,
    pub points: Vec<DVector<f64>>,
}

impl ObservationScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Association records and target states of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub records: Vec<AssociationRecord>,
    pub states: Vec<Vec<DVector<f64>>>,
}

impl GroundTruth {
    pub fn target_counts(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.k_x()).collect()
    }

    /// Check that the records chain together and match the scans.
    pub fn validate_against(&self, scans: &[ObservationScan]) -> Result<()> {
        if self.records.len() != scans.len() {
            return Err(MttError::Structural(format!(
                "{} association records for {} scans",
                self.records.len(),
                scans.len()
            )));
        }
        let mut prev = 0;
        for (t, (rec, scan)) in self.records.iter().zip(scans).enumerate() {
            rec.validate()
                .map_err(|e| e.context(format!("record at t={}", t + 1)))?;
            if rec.k_x_prev() != prev {
                return Err(MttError::Structural(format!(
                    "record at t={} expects {} previous targets, found {prev}",
                    t + 1,
                    rec.k_x_prev()
                )));
            }
            if rec.k_y() != scan.len() {
                return Err(MttError::Structural(format!(
                    "record at t={} explains {} observations but the scan has {}",
                    t + 1,
                    rec.k_y(),
                    scan.len()
                )));
            }
            prev = rec.k_x();
        }
        Ok(())
    }
}

/// Symmetric square root of a positive semidefinite matrix.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub(crate) fn sample_poisson(rng: &mut StreamRng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda)
        .expect("finite positive rate")
        .sample(rng) as usize
}

fn gaussian(rng: &mut StreamRng, mean: &DVector<f64>, sqrt_cov: &DMatrix<f64>) -> DVector<f64> {
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * e
}

enum Population {
    BirthDeath,
    Fixed(usize),
}

/// Simulate `n` steps of the MTT model starting from an empty scene.
///
/// Target observations falling outside the window are recorded as missed
/// detections, so the returned records always explain the scans exactly.
pub fn simulate(
    theta: &ModelParams,
    n: usize,
    seed: u64,
) -> Result<(Vec<ObservationScan>, GroundTruth)> {
    run(theta, n, seed, Population::BirthDeath)
}

/// Simulate `k` immortal targets drawn from the birth distribution at `t = 1`.
/// Births and deaths are disabled regardless of `theta.lambda_b` and `theta.p_s`.
pub fn simulate_fixed_k(
    theta: &ModelParams,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<(Vec<ObservationScan>, GroundTruth)> {
    run(theta, n, seed, Population::Fixed(k))
}

fn run(
    theta: &ModelParams,
    n: usize,
    seed: u64,
    population: Population,
) -> Result<(Vec<ObservationScan>, GroundTruth)> {
    if n == 0 {
        return Err(MttError::InvalidParameter(
            "horizon must be at least 1".into(),
        ));
    }
    let psi = &theta.glssm;
    let dy = psi.dy();
    let sqrt_b = psd_sqrt(&psi.sigma_b);
    let sqrt_w = psd_sqrt(&psi.w);
    let sqrt_v = psd_sqrt(&psi.v);
    let zero_y = DVector::zeros(dy);

    let mut scans = Vec::with_capacity(n);
    let mut truth = GroundTruth {
        records: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
    };
    let mut alive: Vec<DVector<f64>> = Vec::new();

    for t in 1..=n {
        let mut rng = rng::stream(seed, &[purpose::SIMULATE, t as u64]);
        let (c_s, k_b) = match population {
            Population::BirthDeath => {
                let k_b = sample_poisson(&mut rng, theta.lambda_b);
                let c_s: Vec<bool> = alive.iter().map(|_| rng.random_bool(theta.p_s)).collect();
                (c_s, k_b)
            }
            Population::Fixed(k) => (vec![true; alive.len()], if t == 1 { k } else { 0 }),
        };

        let mut next: Vec<DVector<f64>> = Vec::with_capacity(alive.len() + k_b);
        for (x, &s) in alive.iter().zip(&c_s) {
            if s {
                next.push(gaussian(&mut rng, &(&psi.f * x), &sqrt_w));
            }
        }
        for _ in 0..k_b {
            next.push(gaussian(&mut rng, &psi.mu_b, &sqrt_b));
        }

        let mut c_d = Vec::with_capacity(next.len());
        let mut target_obs = Vec::new();
        for x in &next {
            let detected = rng.random_bool(theta.p_d);
            // The observation noise is drawn either way so that the stream
            // layout does not depend on the detection outcome.
            let y = &psi.g * x + gaussian(&mut rng, &zero_y, &sqrt_v);
            let recorded = detected && theta.in_region(&y);
            c_d.push(recorded);
            if recorded {
                target_obs.push(y);
            }
        }

        let k_f = sample_poisson(&mut rng, theta.lambda_f);
        let mut points = target_obs;
        for _ in 0..k_f {
            points.push(DVector::from_fn(dy, |_, _| {
                rng.random_range(-theta.kappa..=theta.kappa)
            }));
        }
        // Uniformly random injective association: shuffle the scan and record
        // where each target-generated point landed.
        let k_d = points.len() - k_f;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        let mut position = vec![0; points.len()];
        let mut shuffled = vec![DVector::zeros(dy); points.len()];
        for (slot, &src) in order.iter().enumerate() {
            position[src] = slot;
            shuffled[slot] = points[src].clone();
        }
        let a = position[..k_d].to_vec();

        truth.records.push(AssociationRecord {
            c_s,
            c_d,
            k_b,
            k_f,
            a,
        });
        truth.states.push(next.clone());
        scans.push(ObservationScan {
            t,
            points: shuffled,
        });
        alive = next;
    }
    Ok((scans, truth))
}
