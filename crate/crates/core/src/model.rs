//! Model parameters, the constant-velocity parametrization and its closed-form
//! M-step, plus the expected-cost planning model of the SMC filter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::smoothing::SufficientStatSet;

/// Matrices of the single-target Gaussian linear state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlssmParams {
    pub mu_b: DVector<f64>,
    pub sigma_b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl GlssmParams {
    pub fn new(
        mu_b: DVector<f64>,
        sigma_b: DMatrix<f64>,
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let dx = f.nrows();
        let dy = g.nrows();
        let square = |m: &DMatrix<f64>, d: usize| m.nrows() == d && m.ncols() == d;
        if !(f.ncols() == dx
            && g.ncols() == dx
            && mu_b.len() == dx
            && square(&sigma_b, dx)
            && square(&w, dx)
            && square(&v, dy))
        {
            return Err(MttError::InvalidParameter(
                "inconsistent state-space dimensions".into(),
            ));
        }
        for (name, m) in [("sigma_b", &sigma_b), ("W", &w), ("V", &v)] {
            if (m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
                return Err(MttError::InvalidParameter(format!(
                    "{name} is not symmetric"
                )));
            }
            if m.diagonal().iter().any(|&d| d < 0.0) {
                return Err(MttError::InvalidParameter(format!(
                    "{name} has a negative variance"
                )));
            }
        }
        Ok(GlssmParams {
            mu_b,
            sigma_b,
            f,
            g,
            w,
            v,
        })
    }

    pub fn dx(&self) -> usize {
        self.f.nrows()
    }

    pub fn dy(&self) -> usize {
        self.g.nrows()
    }
}

/// Full static parameter vector of the MTT model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub glssm: GlssmParams,
    pub p_s: f64,
    pub p_d: f64,
    pub lambda_b: f64,
    pub lambda_f: f64,
    /// Half-width of the observation window `[-kappa, kappa]^dy`.
    pub kappa: f64,
}

impl ModelParams {
    pub fn new(
        glssm: GlssmParams,
        p_s: f64,
        p_d: f64,
        lambda_b: f64,
        lambda_f: f64,
        kappa: f64,
    ) -> Result<Self> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(p_s) || !prob(p_d) {
            return Err(MttError::InvalidParameter(format!(
                "probabilities out of range: p_s={p_s}, p_d={p_d}"
            )));
        }
        if !(lambda_b >= 0.0 && lambda_f >= 0.0) {
            return Err(MttError::InvalidParameter(format!(
                "negative rate: lambda_b={lambda_b}, lambda_f={lambda_f}"
            )));
        }
        if kappa.is_nan() || kappa <= 0.0 {
            return Err(MttError::InvalidParameter(format!(
                "window half-width must be positive, got {kappa}"
            )));
        }
        Ok(ModelParams {
            glssm,
            p_s,
            p_d,
            lambda_b,
            lambda_f,
            kappa,
        })
    }

    /// Lebesgue volume of the observation window, `(2 kappa)^dy`.
    pub fn region_volume(&self) -> f64 {
        (2.0 * self.kappa).powi(self.glssm.dy() as i32)
    }

    pub fn in_region(&self, y: &DVector<f64>) -> bool {
        y.iter().all(|c| c.abs() <= self.kappa)
    }
}

fn default_rho() -> f64 {
    1.0
}

/// Constant-velocity parametrization in the plane (`dx = 4`, `dy = 2`).
///
/// `rho` damps the diagonal blocks of the transition matrix; `rho = 1` is the
/// plain constant-velocity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvParams {
    pub lambda_b: f64,
    pub lambda_f: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub mu_bx: f64,
    pub mu_by: f64,
    pub sigma_bp2: f64,
    pub sigma_bv2: f64,
    pub sigma_xp2: f64,
    pub sigma_xv2: f64,
    pub sigma_y2: f64,
    pub delta: f64,
    pub kappa: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

/// The eleven estimable components of [`CvParams`], in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CvParam {
    LambdaB,
    LambdaF,
    PD,
    PS,
    MuBx,
    MuBy,
    SigmaBp2,
    SigmaBv2,
    SigmaXp2,
    SigmaXv2,
    SigmaY2,
}

impl CvParam {
    pub const ALL: [CvParam; 11] = [
        CvParam::LambdaB,
        CvParam::LambdaF,
        CvParam::PD,
        CvParam::PS,
        CvParam::MuBx,
        CvParam::MuBy,
        CvParam::SigmaBp2,
        CvParam::SigmaBv2,
        CvParam::SigmaXp2,
        CvParam::SigmaXv2,
        CvParam::SigmaY2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CvParam::LambdaB => "lambda_b",
            CvParam::LambdaF => "lambda_f",
            CvParam::PD => "p_d",
            CvParam::PS => "p_s",
            CvParam::MuBx => "mu_bx",
            CvParam::MuBy => "mu_by",
            CvParam::SigmaBp2 => "sigma_bp2",
            CvParam::SigmaBv2 => "sigma_bv2",
            CvParam::SigmaXp2 => "sigma_xp2",
            CvParam::SigmaXv2 => "sigma_xv2",
            CvParam::SigmaY2 => "sigma_y2",
        }
    }

    pub fn from_name(name: &str) -> Option<CvParam> {
        CvParam::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Sufficient statistics (1-based indices) read by this parameter's update.
    pub fn statistics(self) -> &'static [usize] {
        match self {
            CvParam::LambdaB => &[13, 15],
            CvParam::LambdaF => &[14, 15],
            CvParam::PD => &[9, 10],
            CvParam::PS => &[11, 12],
            CvParam::MuBx | CvParam::MuBy => &[6, 13],
            CvParam::SigmaBp2 | CvParam::SigmaBv2 => &[6, 7, 13],
            CvParam::SigmaXp2 | CvParam::SigmaXv2 => &[3, 4, 5, 11],
            CvParam::SigmaY2 => &[1, 2, 8, 9],
        }
    }
}

impl CvParams {
    pub fn get(&self, p: CvParam) -> f64 {
        match p {
            CvParam::LambdaB => self.lambda_b,
            CvParam::LambdaF => self.lambda_f,
            CvParam::PD => self.p_d,
            CvParam::PS => self.p_s,
            CvParam::MuBx => self.mu_bx,
            CvParam::MuBy => self.mu_by,
            CvParam::SigmaBp2 => self.sigma_bp2,
            CvParam::SigmaBv2 => self.sigma_bv2,
            CvParam::SigmaXp2 => self.sigma_xp2,
            CvParam::SigmaXv2 => self.sigma_xv2,
            CvParam::SigmaY2 => self.sigma_y2,
        }
    }

    pub fn set(&mut self, p: CvParam, value: f64) {
        let slot = match p {
            CvParam::LambdaB => &mut self.lambda_b,
            CvParam::LambdaF => &mut self.lambda_f,
            CvParam::PD => &mut self.p_d,
            CvParam::PS => &mut self.p_s,
            CvParam::MuBx => &mut self.mu_bx,
            CvParam::MuBy => &mut self.mu_by,
            CvParam::SigmaBp2 => &mut self.sigma_bp2,
            CvParam::SigmaBv2 => &mut self.sigma_bv2,
            CvParam::SigmaXp2 => &mut self.sigma_xp2,
            CvParam::SigmaXv2 => &mut self.sigma_xv2,
            CvParam::SigmaY2 => &mut self.sigma_y2,
        };
        *slot = value;
    }

    pub fn validate(&self) -> Result<()> {
        let variances = [
            ("sigma_bp2", self.sigma_bp2),
            ("sigma_bv2", self.sigma_bv2),
            ("sigma_xp2", self.sigma_xp2),
            ("sigma_xv2", self.sigma_xv2),
            ("sigma_y2", self.sigma_y2),
        ];
        for (name, v) in variances {
            if !v.is_finite() || v < 0.0 {
                return Err(MttError::InvalidParameter(format!(
                    "{name} must be a nonnegative variance, got {v}"
                )));
            }
        }
        for (name, p) in [("p_d", self.p_d), ("p_s", self.p_s)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MttError::InvalidParameter(format!(
                    "{name} must be a probability, got {p}"
                )));
            }
        }
        for (name, r) in [("lambda_b", self.lambda_b), ("lambda_f", self.lambda_f)] {
            if !r.is_finite() || r < 0.0 {
                return Err(MttError::InvalidParameter(format!(
                    "{name} must be a nonnegative rate, got {r}"
                )));
            }
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 {
            return Err(MttError::InvalidParameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(MttError::InvalidParameter(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if !self.delta.is_finite() || !self.mu_bx.is_finite() || !self.mu_by.is_finite() {
            return Err(MttError::InvalidParameter("non-finite CV component".into()));
        }
        Ok(())
    }

    /// Assemble with the transition matrix selected by `self.rho`.
    pub fn assemble(&self) -> Result<ModelParams> {
        cv_assemble_stationary(self, self.rho)
    }

    /// Transition matrix with diagonal blocks `rho I` and coupling `delta I`.
    pub fn transition(&self) -> DMatrix<f64> {
        cv_transition(self.delta, self.rho)
    }
}

fn cv_transition(delta: f64, rho: f64) -> DMatrix<f64> {
    let mut f = DMatrix::<f64>::identity(4, 4) * rho;
    f[(0, 2)] = delta;
    f[(1, 3)] = delta;
    f
}

/// Build the constant-velocity model (identity diagonal blocks).
pub fn cv_assemble(cv: &CvParams) -> Result<ModelParams> {
    cv_assemble_stationary(cv, 1.0)
}

/// Build the constant-velocity model with damped diagonal blocks `rho I`.
pub fn cv_assemble_stationary(cv: &CvParams, rho: f64) -> Result<ModelParams> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(MttError::InvalidParameter(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    cv.validate()?;
    let mu_b = DVector::from_vec(vec![cv.mu_bx, cv.mu_by, 0.0, 0.0]);
    let sigma_b = DMatrix::from_diagonal(&DVector::from_vec(vec![
        cv.sigma_bp2,
        cv.sigma_bp2,
        cv.sigma_bv2,
        cv.sigma_bv2,
    ]));
    let f = cv_transition(cv.delta, rho);
    let mut g = DMatrix::zeros(2, 4);
    g[(0, 0)] = 1.0;
    g[(1, 1)] = 1.0;
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![
        cv.sigma_xp2,
        cv.sigma_xp2,
        cv.sigma_xv2,
        cv.sigma_xv2,
    ]));
    let v = DMatrix::identity(2, 2) * cv.sigma_y2;
    let glssm = GlssmParams::new(mu_b, sigma_b, f, g, w, v)?;
    ModelParams::new(glssm, cv.p_s, cv.p_d, cv.lambda_b, cv.lambda_f, cv.kappa)
}

/// Numerical guards applied by [`lambda_mstep_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOptions {
    /// Updates whose denominator falls below this keep the previous value.
    pub denominator_floor: f64,
    pub prob_clamp: f64,
    pub variance_floor: f64,
    pub rate_floor: f64,
    /// Components that are never updated.
    pub frozen: Vec<CvParam>,
}

impl Default for MStepOptions {
    fn default() -> Self {
        MStepOptions {
            denominator_floor: 1e-12,
            prob_clamp: 1e-6,
            variance_floor: 1e-12,
            rate_floor: 1e-12,
            frozen: Vec::new(),
        }
    }
}

impl MStepOptions {
    /// Options for the fixed-K model: birth-death structure and the
    /// unidentifiable initial distribution stay at their current values.
    pub fn fixed_k() -> Self {
        MStepOptions {
            frozen: vec![
                CvParam::LambdaB,
                CvParam::PS,
                CvParam::MuBx,
                CvParam::MuBy,
                CvParam::SigmaBp2,
                CvParam::SigmaBv2,
            ],
            ..Default::default()
        }
    }
}

/// Closed-form M-step for the constant-velocity model with default guards.
pub fn lambda_mstep(stats: &SufficientStatSet, prev: &CvParams) -> CvParams {
    lambda_mstep_with(stats, prev, &MStepOptions::default())
}

/// Closed-form M-step. `sigma_xp2` is a structural zero and never updated.
pub fn lambda_mstep_with(
    stats: &SufficientStatSet,
    prev: &CvParams,
    opts: &MStepOptions,
) -> CvParams {
    assert_eq!(stats.dx(), 4, "constant-velocity M-step needs dx = 4");
    assert_eq!(stats.dy(), 2, "constant-velocity M-step needs dy = 2");
    let floor = opts.denominator_floor;
    let mut next = *prev;
    let ratio = |num: f64, den: f64, old: f64| if den > floor { num / den } else { old };

    let s13 = stats.s13;
    next.mu_bx = ratio(stats.s6[(0, 0)], s13, prev.mu_bx);
    next.mu_by = ratio(stats.s6[(1, 0)], s13, prev.mu_by);

    let mp = selector(0);
    let mv = selector(2);
    if s13 > floor {
        let mu = DVector::from_vec(vec![next.mu_bx, next.mu_by, 0.0, 0.0]);
        let centered =
            &stats.s7 - (&stats.s6 * mu.transpose()) * 2.0 + (&mu * mu.transpose()) * s13;
        next.sigma_bp2 = (&centered * mp.transpose() * &mp).trace() / (2.0 * s13);
        next.sigma_bv2 = (&centered * mv.transpose() * &mv).trace() / (2.0 * s13);
    }

    let s11 = stats.s11;
    if s11 > floor {
        let f = prev.transition();
        let fv = f.rows(2, 2).into_owned();
        let resid = (&mv * &stats.s4 * mv.transpose()).trace()
            - 2.0 * (&fv * &stats.s5 * mv.transpose()).trace()
            + (&fv * &stats.s3 * fv.transpose()).trace();
        next.sigma_xv2 = resid / (2.0 * s11);
    }

    if stats.s9 > floor {
        let g = selector(0);
        let resid = (&stats.s8 - (&g * &stats.s2) * 2.0 + &g * &stats.s1 * g.transpose()).trace();
        next.sigma_y2 = resid / (2.0 * stats.s9);
    }

    next.p_d = ratio(stats.s9, stats.s10, prev.p_d);
    next.p_s = ratio(stats.s11, stats.s12, prev.p_s);
    next.lambda_b = ratio(s13, stats.s15, prev.lambda_b);
    next.lambda_f = ratio(stats.s14, stats.s15, prev.lambda_f);

    let lo = opts.prob_clamp;
    next.p_d = next.p_d.clamp(lo, 1.0 - lo);
    next.p_s = next.p_s.clamp(lo, 1.0 - lo);
    for v in [
        &mut next.sigma_bp2,
        &mut next.sigma_bv2,
        &mut next.sigma_xv2,
        &mut next.sigma_y2,
    ] {
        *v = v.max(opts.variance_floor);
    }
    next.lambda_b = next.lambda_b.max(opts.rate_floor);
    next.lambda_f = next.lambda_f.max(opts.rate_floor);
    next.sigma_xp2 = prev.sigma_xp2;

    for &p in &opts.frozen {
        next.set(p, prev.get(p));
    }
    next
}

/// `[0 I 0]`-style 2x4 selector starting at column `offset`.
fn selector(offset: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, 4);
    m[(0, offset)] = 1.0;
    m[(1, offset + 1)] = 1.0;
    m
}

/// Per-operation cost constants of the SMC filter and the EM wrappers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelConstants {
    /// `c_1 .. c_9`.
    pub c: [f64; 9],
    /// Assignment-ranking depth.
    pub l: usize,
    /// Particle count.
    pub n: usize,
    pub d_x: usize,
}

impl Default for CostModelConstants {
    fn default() -> Self {
        CostModelConstants {
            c: [1.0; 9],
            l: 10,
            n: 100,
            d_x: 4,
        }
    }
}

/// Mean number of targets at stationarity, `lambda_b / (1 - p_s)`.
pub fn stationary_target_mean(theta: &ModelParams) -> Result<f64> {
    if theta.p_s >= 1.0 {
        return Err(MttError::InvalidParameter(
            "p_s = 1 has no stationary target count".into(),
        ));
    }
    Ok(theta.lambda_b / (1.0 - theta.p_s))
}

/// Third raw moment of a Poisson variable.
pub fn poisson_third_moment(lambda: f64) -> f64 {
    lambda.powi(3) + 3.0 * lambda.powi(2) + lambda
}

/// Expected per-step cost of SMC filtering at stationarity.
pub fn expected_smc_cost(theta: &ModelParams, consts: &CostModelConstants) -> Result<f64> {
    if consts.c.iter().any(|&c| c < 0.0) {
        return Err(MttError::InvalidParameter(
            "cost constants must be nonnegative".into(),
        ));
    }
    let c = &consts.c;
    let lambda_x = stationary_target_mean(theta)?;
    let lambda_y = lambda_x * (1.0 + theta.p_d) + theta.lambda_f;
    let d3 = (consts.d_x as f64).powi(3);
    let per_particle = (c[0] + c[2])
        + (c[1] + d3 * (c[3] + c[4] * (theta.p_d + theta.lambda_f))) * lambda_x
        + d3 * c[4] * theta.p_d * lambda_x.powi(2)
        + c[5] * consts.l as f64 * poisson_third_moment(lambda_y);
    Ok(consts.n as f64 * per_particle)
}

/// Expected cost of one batch SMC-EM iteration over `horizon` steps.
pub fn expected_batch_em_cost(
    theta: &ModelParams,
    consts: &CostModelConstants,
    horizon: usize,
) -> Result<f64> {
    let lambda_x = stationary_target_mean(theta)?;
    let n = horizon as f64;
    let ffbs = consts.c[7] * consts.n as f64 * n * (consts.d_x as f64).powi(3) * lambda_x;
    Ok(ffbs + n * expected_smc_cost(theta, consts)? + consts.c[6])
}

/// Expected cost of one step of SMC online EM.
pub fn expected_online_em_cost(theta: &ModelParams, consts: &CostModelConstants) -> Result<f64> {
    let lambda_x = stationary_target_mean(theta)?;
    let fsr = consts.c[8] * consts.n as f64 * lambda_x * (consts.d_x as f64).powi(5);
    Ok(fsr + expected_smc_cost(theta, consts)? + consts.c[6])
}
