//! Prediction, measurement update and backward-kernel parameters for a single
//! Gaussian linear state-space model.
//!
//! Every linear solve goes through a Cholesky factor; covariances are
//! symmetrized as `(A + A^T) / 2` after each update so that long online runs do
//! not drift away from symmetry.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MttError, Result};
use crate::model::GlssmParams;

/// Mean and covariance of a Gaussian state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        GaussianMoments { mu, sigma }
    }

    /// Birth distribution of the model.
    pub fn prior(psi: &GlssmParams) -> Self {
        GaussianMoments {
            mu: psi.mu_b.clone(),
            sigma: psi.sigma_b.clone(),
        }
    }

    /// Second moment `Sigma + mu mu^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.sigma + &self.mu * self.mu.transpose()
    }
}

/// Parameters of the backward kernel `x_t | x_{t+1} ~ N(B x_{t+1} + b, Sigma_cross)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardParams {
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub sigma_cross: DMatrix<f64>,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn cholesky(m: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| MttError::numerical(context.to_string()))
}

/// One-step prediction `(F mu, F Sigma F^T + W)`.
pub fn predict(filt: &GaussianMoments, psi: &GlssmParams) -> GaussianMoments {
    let mu = &psi.f * &filt.mu;
    let mut sigma = &psi.f * &filt.sigma * psi.f.transpose() + &psi.w;
    symmetrize(&mut sigma);
    GaussianMoments { mu, sigma }
}

/// Measurement update. A missing observation leaves the moments unchanged and
/// contributes zero log-likelihood.
pub fn update(
    pred: &GaussianMoments,
    y: Option<&DVector<f64>>,
    psi: &GlssmParams,
) -> Result<(GaussianMoments, f64)> {
    let Some(y) = y else {
        return Ok((pred.clone(), 0.0));
    };
    let g_sigma = &psi.g * &pred.sigma;
    let gamma = &g_sigma * psi.g.transpose() + &psi.v;
    let chol = cholesky(gamma, "innovation covariance of the measurement update")?;
    let resid = y - &psi.g * &pred.mu;
    // X = Gamma^{-1} G Sigma, so the gain is X^T.
    let x = chol.solve(&g_sigma);
    let mu = &pred.mu + x.transpose() * &resid;
    let mut sigma = &pred.sigma - g_sigma.transpose() * &x;
    symmetrize(&mut sigma);
    let loglik = gaussian_logpdf_with(&chol, &resid);
    Ok((GaussianMoments { mu, sigma }, loglik))
}

/// Parameters of the backward kernel from the filter at `t` to the state at `t+1`.
pub fn backward_params(filt: &GaussianMoments, psi: &GlssmParams) -> Result<BackwardParams> {
    let f_sigma = &psi.f * &filt.sigma;
    let mut pred_cov = &f_sigma * psi.f.transpose() + &psi.w;
    symmetrize(&mut pred_cov);
    let chol = cholesky(
        pred_cov,
        "predictive state covariance of the backward kernel",
    )?;
    // B^T = (F Sigma F^T + W)^{-1} F Sigma.
    let b_mat = chol.solve(&f_sigma).transpose();
    let bf = &b_mat * &psi.f;
    let b_vec = &filt.mu - &bf * &filt.mu;
    let mut sigma_cross = &filt.sigma - &bf * &filt.sigma;
    symmetrize(&mut sigma_cross);
    Ok(BackwardParams {
        b_mat,
        b_vec,
        sigma_cross,
    })
}

/// `log N(y; G mu, G Sigma G^T + V)`.
pub fn predictive_loglik(
    pred: &GaussianMoments,
    y: &DVector<f64>,
    psi: &GlssmParams,
) -> Result<f64> {
    Ok(PredictiveDensity::new(pred, psi)?.loglik(y.as_slice()))
}

fn gaussian_logpdf_with(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let d = resid.len() as f64;
    let z = chol
        .l()
        .solve_lower_triangular(resid)
        .expect("cholesky factor is nonsingular");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (d * (2.0 * PI).ln() + log_det + z.norm_squared())
}

/// Observation predictive density of one target, factorized once so that it
/// can be evaluated cheaply against every point of a scan.
#[derive(Debug, Clone)]
pub struct PredictiveDensity {
    mean: Vec<f64>,
    /// Row-major lower Cholesky factor of the innovation covariance.
    chol: Vec<f64>,
    log_norm: f64,
}

impl PredictiveDensity {
    pub fn new(pred: &GaussianMoments, psi: &GlssmParams) -> Result<Self> {
        let mut gamma = &psi.g * &pred.sigma * psi.g.transpose() + &psi.v;
        symmetrize(&mut gamma);
        let dy = gamma.nrows();
        let chol = cholesky(gamma, "observation predictive covariance")?;
        let l = chol.l();
        let mut flat = vec![0.0; dy * dy];
        let mut log_det = 0.0;
        for i in 0..dy {
            for j in 0..=i {
                flat[i * dy + j] = l[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        Ok(PredictiveDensity {
            mean: (&psi.g * &pred.mu).as_slice().to_vec(),
            chol: flat,
            log_norm: -0.5 * (dy as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn loglik(&self, y: &[f64]) -> f64 {
        let dy = self.mean.len();
        debug_assert_eq!(y.len(), dy);
        // Forward substitution L z = y - mean, accumulating |z|^2.
        let mut z = [0.0f64; 8];
        let mut zbuf;
        let z: &mut [f64] = if dy <= 8 {
            &mut z[..dy]
        } else {
            zbuf = vec![0.0; dy];
            &mut zbuf
        };
        let mut sq = 0.0;
        for i in 0..dy {
            let mut acc = y[i] - self.mean[i];
            for (j, zj) in z[..i].iter().enumerate() {
                acc -= self.chol[i * dy + j] * zj;
            }
            z[i] = acc / self.chol[i * dy + i];
            sq += z[i] * z[i];
        }
        self.log_norm - 0.5 * sq
    }
}
