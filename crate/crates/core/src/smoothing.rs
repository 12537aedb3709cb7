//! Forward-only smoothing of the MTT sufficient statistics.
//!
//! For a single target, the conditional expectation of each additive statistic
//! given the state at the current time is a quadratic function of that state,
//! `T(x) = x^T P x + q^T x + r`, one quadratic per matrix entry. The quadratics
//! are pushed through the backward kernel `x_{t-1} | x_t` at every step and a
//! fresh increment is added; evaluating them against the filter moments gives
//! the smoothed expectation without a backward pass.
//!
//! A [`Blend`] generalizes the accumulation: the propagated part is scaled by
//! `carry` and the fresh increment by `fresh`. Plain sums use `(1, 1)`;
//! stochastic approximation with step size `gamma` uses `(1 - gamma, gamma)`.
//!
//! At the multi-target level, targets that die are evaluated once and folded
//! into a dead accumulator, and the eight statistics that depend on the
//! associations alone are summed directly.

use nalgebra::DMatrix;

use crate::error::{MttError, Result};
use crate::kalman::{self, BackwardParams, GaussianMoments};
use crate::model::GlssmParams;
use crate::simulator::{AssociationRecord, ObservationScan};

/// Expected values of the fifteen sufficient statistics.
///
/// `s1`..`s7` are `dx x dx` except `s2` (`dx x dy`) and `s6` (`dx x 1`); `s8` is
/// `dy x dy`; the rest are counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStatSet {
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub s3: DMatrix<f64>,
    pub s4: DMatrix<f64>,
    pub s5: DMatrix<f64>,
    pub s6: DMatrix<f64>,
    pub s7: DMatrix<f64>,
    pub s8: DMatrix<f64>,
    pub s9: f64,
    pub s10: f64,
    pub s11: f64,
    pub s12: f64,
    pub s13: f64,
    pub s14: f64,
    pub s15: f64,
}

impl SufficientStatSet {
    pub fn zeros(dx: usize, dy: usize) -> Self {
        let sq = || DMatrix::zeros(dx, dx);
        SufficientStatSet {
            s1: sq(),
            s2: DMatrix::zeros(dx, dy),
            s3: sq(),
            s4: sq(),
            s5: sq(),
            s6: DMatrix::zeros(dx, 1),
            s7: sq(),
            s8: DMatrix::zeros(dy, dy),
            s9: 0.0,
            s10: 0.0,
            s11: 0.0,
            s12: 0.0,
            s13: 0.0,
            s14: 0.0,
            s15: 0.0,
        }
    }

    pub fn dx(&self) -> usize {
        self.s1.nrows()
    }

    pub fn dy(&self) -> usize {
        self.s8.nrows()
    }

    /// Matrix-valued statistic `m` in `1..=8`.
    pub fn matrix(&self, m: usize) -> &DMatrix<f64> {
        match m {
            1 => &self.s1,
            2 => &self.s2,
            3 => &self.s3,
            4 => &self.s4,
            5 => &self.s5,
            6 => &self.s6,
            7 => &self.s7,
            8 => &self.s8,
            _ => panic!("statistic {m} is not matrix-valued"),
        }
    }

    pub fn matrix_mut(&mut self, m: usize) -> &mut DMatrix<f64> {
        match m {
            1 => &mut self.s1,
            2 => &mut self.s2,
            3 => &mut self.s3,
            4 => &mut self.s4,
            5 => &mut self.s5,
            6 => &mut self.s6,
            7 => &mut self.s7,
            8 => &mut self.s8,
            _ => panic!("statistic {m} is not matrix-valued"),
        }
    }

    /// Scalar statistic `m` in `9..=15`.
    pub fn scalar(&self, m: usize) -> f64 {
        self.scalars()[m - 9]
    }

    pub fn scalars(&self) -> [f64; 7] {
        [
            self.s9, self.s10, self.s11, self.s12, self.s13, self.s14, self.s15,
        ]
    }

    fn scalars_mut(&mut self) -> [&mut f64; 7] {
        [
            &mut self.s9,
            &mut self.s10,
            &mut self.s11,
            &mut self.s12,
            &mut self.s13,
            &mut self.s14,
            &mut self.s15,
        ]
    }

    pub fn scale(&mut self, c: f64) {
        for m in 1..=8 {
            *self.matrix_mut(m) *= c;
        }
        for s in self.scalars_mut() {
            *s *= c;
        }
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &SufficientStatSet, w: f64) {
        for m in 1..=8 {
            *self.matrix_mut(m) += other.matrix(m) * w;
        }
        for (s, o) in self.scalars_mut().into_iter().zip(other.scalars()) {
            *s += w * o;
        }
    }

    /// `self = carry * self + fresh * other`.
    pub fn blend_with(&mut self, other: &SufficientStatSet, blend: Blend) {
        self.scale(blend.carry);
        self.add_scaled(other, blend.fresh);
    }

    /// Largest absolute difference over all entries.
    pub fn max_abs_diff(&self, other: &SufficientStatSet) -> f64 {
        let mut d: f64 = 0.0;
        for m in 1..=8 {
            d = d.max((self.matrix(m) - other.matrix(m)).amax());
        }
        for (a, b) in self.scalars().into_iter().zip(other.scalars()) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// Weights of the carried-over and fresh parts of one accumulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub carry: f64,
    pub fresh: f64,
}

impl Blend {
    pub const PLAIN: Blend = Blend {
        carry: 1.0,
        fresh: 1.0,
    };

    /// Stochastic-approximation weights `(1 - gamma, gamma)`.
    pub fn stochastic(gamma: f64) -> Blend {
        Blend {
            carry: 1.0 - gamma,
            fresh: gamma,
        }
    }
}

/// Which of the state-dependent statistics `1..=7` a recursion maintains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatMask(pub [bool; 7]);

impl StatMask {
    pub const ALL: StatMask = StatMask([true; 7]);
    pub const NONE: StatMask = StatMask([false; 7]);

    /// Mask of the state-dependent members of a list of 1-based statistic
    /// indices; indices above 7 are ignored.
    pub fn from_statistics(stats: &[usize]) -> StatMask {
        let mut mask = [false; 7];
        for &m in stats {
            if (1..=7).contains(&m) {
                mask[m - 1] = true;
            }
        }
        StatMask(mask)
    }

    pub fn contains(&self, m: usize) -> bool {
        self.0[m - 1]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

struct Shape {
    rows: usize,
    cols: usize,
    symmetric: bool,
    /// Statistics 2 and 6 are linear in the state, so their quadratic term
    /// stays zero and is not stored.
    quadratic: bool,
}

fn shape(m: usize, dx: usize, dy: usize) -> Shape {
    let (cols, symmetric, quadratic) = match m {
        1 | 3 | 4 | 7 => (dx, true, true),
        5 => (dx, false, true),
        2 => (dy, false, false),
        6 => (1, false, false),
        _ => unreachable!(),
    };
    Shape {
        rows: dx,
        cols,
        symmetric,
        quadratic,
    }
}

fn entries(s: &Shape) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..s.rows).flat_map(move |i| {
        let start = if s.symmetric { i } else { 0 };
        (start..s.cols).map(move |j| (i, j))
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    /// Row-major `dx x dx` quadratic term per entry (empty for linear statistics).
    p: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

/// Quadratic coefficients `(P, q, r)` of every entry of every maintained
/// statistic for one target. Symmetric statistics store only `j >= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionVars {
    dx: usize,
    dy: usize,
    blocks: [Option<Block>; 7],
}

/// Row-major copies of the backward kernel used by the hot loop.
struct FlatKernel {
    b: Vec<f64>,
    bv: Vec<f64>,
    sc: Vec<f64>,
}

impl FlatKernel {
    fn new(bp: &BackwardParams) -> Self {
        let dx = bp.b_vec.len();
        let mut b = vec![0.0; dx * dx];
        let mut sc = vec![0.0; dx * dx];
        for i in 0..dx {
            for j in 0..dx {
                b[i * dx + j] = bp.b_mat[(i, j)];
                sc[i * dx + j] = bp.sigma_cross[(i, j)];
            }
        }
        FlatKernel {
            b,
            bv: bp.b_vec.as_slice().to_vec(),
            sc,
        }
    }
}

impl RecursionVars {
    /// Variables of a target at its first time step. `y` is its observation if
    /// detected; the initial increments are scaled by `fresh`.
    pub fn init(dx: usize, dy: usize, mask: StatMask, y: Option<&[f64]>, fresh: f64) -> Self {
        let dd = dx * dx;
        let cd = if y.is_some() { 1.0 } else { 0.0 };
        let blocks = std::array::from_fn(|k| {
            let m = k + 1;
            if !mask.contains(m) {
                return None;
            }
            let s = shape(m, dx, dy);
            let n = entries(&s).count();
            let mut block = Block {
                p: if s.quadratic {
                    vec![0.0; n * dd]
                } else {
                    Vec::new()
                },
                q: vec![0.0; n * dx],
                r: vec![0.0; n],
            };
            for (e, (i, j)) in entries(&s).enumerate() {
                match m {
                    1 => block.p[e * dd + i * dx + j] = fresh * cd,
                    7 => block.p[e * dd + i * dx + j] = fresh,
                    2 => {
                        if let Some(y) = y {
                            block.q[e * dx + i] = fresh * y[j];
                        }
                    }
                    6 => block.q[e * dx + i] = fresh,
                    _ => {}
                }
            }
            Some(block)
        });
        RecursionVars { dx, dy, blocks }
    }

    pub fn mask(&self) -> StatMask {
        StatMask(std::array::from_fn(|k| self.blocks[k].is_some()))
    }

    /// Advance one time step through the backward kernel `bp` of the previous
    /// filter, with `y` the target's observation at the new time if detected.
    pub fn step(&mut self, bp: &BackwardParams, y: Option<&[f64]>, blend: Blend) {
        // A literal dimension lets the compiler unroll the dense loops below
        // for the planar constant-velocity model.
        if self.dx == 4 {
            self.step_dim(4, bp, y, blend);
        } else {
            self.step_dim(self.dx, bp, y, blend);
        }
    }

    #[inline(always)]
    fn step_dim(&mut self, dx: usize, bp: &BackwardParams, y: Option<&[f64]>, blend: Blend) {
        let dy = self.dy;
        let dd = dx * dx;
        let k = FlatKernel::new(bp);
        let (b, bv, sc) = (&k.b[..dd], &k.bv[..dx], &k.sc[..dd]);
        let carry = blend.carry;
        let fresh = blend.fresh;
        let cd = if y.is_some() { 1.0 } else { 0.0 };

        let mut pb_mat = vec![0.0; dd];
        let mut w = vec![0.0; dx];
        let (pb_mat, w) = (&mut pb_mat[..dd], &mut w[..dx]);

        for (idx, slot) in self.blocks.iter_mut().enumerate() {
            let Some(block) = slot.as_mut() else {
                continue;
            };
            let m = idx + 1;
            let s = shape(m, dx, dy);
            for (e, (i, j)) in entries(&s).enumerate() {
                let q = &mut block.q[e * dx..(e + 1) * dx];
                let r = &mut block.r[e];
                if s.quadratic {
                    let p = &mut block.p[e * dd..(e + 1) * dd];
                    // Propagate x^T P x + q^T x + r through x = B x' + b + noise.
                    let mut tr = 0.0;
                    let mut bpb = 0.0;
                    for a in 0..dx {
                        let mut pb = 0.0;
                        let mut ptb = 0.0;
                        for c in 0..dx {
                            pb += p[a * dx + c] * bv[c];
                            ptb += p[c * dx + a] * bv[c];
                            tr += p[a * dx + c] * sc[c * dx + a];
                        }
                        bpb += bv[a] * pb;
                        w[a] = q[a] + pb + ptb;
                    }
                    let qb: f64 = q.iter().zip(bv).map(|(x, y)| x * y).sum();
                    *r = carry * (*r + tr + qb + bpb);
                    for a in 0..dx {
                        let mut acc = 0.0;
                        for c in 0..dx {
                            acc += b[c * dx + a] * w[c];
                        }
                        q[a] = carry * acc;
                    }
                    // P <- B^T P B.
                    for a in 0..dx {
                        for c in 0..dx {
                            let mut acc = 0.0;
                            for l in 0..dx {
                                acc += p[a * dx + l] * b[l * dx + c];
                            }
                            pb_mat[a * dx + c] = acc;
                        }
                    }
                    for a in 0..dx {
                        for c in 0..dx {
                            let mut acc = 0.0;
                            for l in 0..dx {
                                acc += b[l * dx + a] * pb_mat[l * dx + c];
                            }
                            p[a * dx + c] = carry * acc;
                        }
                    }
                    match m {
                        1 => p[i * dx + j] += fresh * cd,
                        3 => {
                            for a in 0..dx {
                                for c in 0..dx {
                                    p[a * dx + c] += fresh * b[i * dx + a] * b[j * dx + c];
                                }
                                q[a] += fresh * (b[i * dx + a] * bv[j] + b[j * dx + a] * bv[i]);
                            }
                            *r += fresh * (sc[j * dx + i] + bv[i] * bv[j]);
                        }
                        4 => p[i * dx + j] += fresh,
                        5 => {
                            for a in 0..dx {
                                p[a * dx + j] += fresh * b[i * dx + a];
                            }
                            q[j] += fresh * bv[i];
                        }
                        _ => {}
                    }
                } else {
                    let qb: f64 = q.iter().zip(bv).map(|(x, y)| x * y).sum();
                    *r = carry * (*r + qb);
                    for a in 0..dx {
                        let mut acc = 0.0;
                        for c in 0..dx {
                            acc += b[c * dx + a] * q[c];
                        }
                        w[a] = acc;
                    }
                    for a in 0..dx {
                        q[a] = carry * w[a];
                    }
                    if m == 2 {
                        if let Some(y) = y {
                            q[i] += fresh * cd * y[j];
                        }
                    }
                }
            }
        }
    }

    /// Add `weight * E[T(x)]` under `filt` to the statistics of `out`.
    pub fn eval_into(&self, filt: &GaussianMoments, weight: f64, out: &mut SufficientStatSet) {
        if self.dx == 4 {
            self.eval_dim(4, filt, weight, out);
        } else {
            self.eval_dim(self.dx, filt, weight, out);
        }
    }

    #[inline(always)]
    fn eval_dim(
        &self,
        dx: usize,
        filt: &GaussianMoments,
        weight: f64,
        out: &mut SufficientStatSet,
    ) {
        let dd = dx * dx;
        let mu = &filt.mu.as_slice()[..dx];
        // Row-major transpose of the second moment, so that tr(P M) is a
        // plain dot product with the row-major P.
        let mut second_t = vec![0.0; dd];
        for a in 0..dx {
            for c in 0..dx {
                second_t[a * dx + c] = filt.sigma[(c, a)] + mu[c] * mu[a];
            }
        }
        let second_t = &second_t[..dd];
        for (idx, slot) in self.blocks.iter().enumerate() {
            let Some(block) = slot.as_ref() else {
                continue;
            };
            let m = idx + 1;
            let s = shape(m, dx, self.dy);
            let target = out.matrix_mut(m);
            for (e, (i, j)) in entries(&s).enumerate() {
                let mut v = block.r[e];
                let q = &block.q[e * dx..(e + 1) * dx];
                for a in 0..dx {
                    v += q[a] * mu[a];
                }
                if s.quadratic {
                    let p = &block.p[e * dd..(e + 1) * dd];
                    for k in 0..dd {
                        v += p[k] * second_t[k];
                    }
                }
                target[(i, j)] += weight * v;
                if s.symmetric && i != j {
                    target[(j, i)] += weight * v;
                }
            }
        }
    }

    /// Expected statistics under `filt`; unmaintained statistics are zero.
    pub fn eval(&self, filt: &GaussianMoments) -> SufficientStatSet {
        let mut out = SufficientStatSet::zeros(self.dx, self.dy);
        self.eval_into(filt, 1.0, &mut out);
        out
    }
}

/// Initial recursion variables (plain accumulation) of a target whose first
/// observation is `y` (or which is undetected).
pub fn init_vars(dx: usize, dy: usize, y: Option<&[f64]>) -> RecursionVars {
    RecursionVars::init(dx, dy, StatMask::ALL, y, 1.0)
}

/// One recursion step with the given accumulation weights.
pub fn step_vars(
    vars: &RecursionVars,
    bp: &BackwardParams,
    y: Option<&[f64]>,
    blend: Blend,
) -> RecursionVars {
    let mut next = vars.clone();
    next.step(bp, y, blend);
    next
}

/// `tr(P (Sigma + mu mu^T)) + q^T mu + r` for every maintained entry.
pub fn eval_statistic(vars: &RecursionVars, filt: &GaussianMoments) -> SufficientStatSet {
    vars.eval(filt)
}

/// Identity of a target: its birth time and position among that step's births.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetLabel {
    pub born: usize,
    pub slot: usize,
}

/// Filter moments and smoothing variables of one alive target.
///
/// `vars` holds one set of recursion variables per accumulation bank.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSmoother {
    pub filt: GaussianMoments,
    pub vars: Vec<RecursionVars>,
    pub label: TargetLabel,
}

/// Statistics of targets no longer alive plus the association-only statistics,
/// one set per accumulation bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffAccumulator {
    pub banks: Vec<SufficientStatSet>,
}

/// Per-hypothesis smoothing state of the whole target population.
#[derive(Debug, Clone, PartialEq)]
pub struct MttState {
    pub targets: Vec<TargetSmoother>,
    pub acc: SuffAccumulator,
    masks: Vec<StatMask>,
    dx: usize,
    dy: usize,
    t: usize,
}

impl MttState {
    /// Empty scene before the first step. One accumulation bank is kept per mask.
    pub fn new(dx: usize, dy: usize, masks: Vec<StatMask>) -> Self {
        MttState {
            targets: Vec::new(),
            acc: SuffAccumulator {
                banks: masks
                    .iter()
                    .map(|_| SufficientStatSet::zeros(dx, dy))
                    .collect(),
            },
            masks,
            dx,
            dy,
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn k_x(&self) -> usize {
        self.targets.len()
    }

    pub fn masks(&self) -> &[StatMask] {
        &self.masks
    }

    fn tracks_statistics(&self) -> bool {
        self.masks.iter().any(|m| !m.is_empty())
    }

    /// Apply one step of association `z` to `scan`. `preds`, when given, are
    /// the already computed predictive moments of the new target list
    /// (survivors then births).
    pub fn step(
        &mut self,
        z: &AssociationRecord,
        scan: &ObservationScan,
        psi: &GlssmParams,
        blends: &[Blend],
        preds: Option<&[GaussianMoments]>,
    ) -> Result<()> {
        if blends.len() != self.masks.len() {
            return Err(MttError::Structural(format!(
                "{} step weights for {} accumulation banks",
                blends.len(),
                self.masks.len()
            )));
        }
        if z.k_x_prev() != self.targets.len() {
            return Err(MttError::Structural(format!(
                "association has {} survival indicators but {} targets are alive",
                z.k_x_prev(),
                self.targets.len()
            )));
        }
        z.validate()?;
        if z.k_y() != scan.len() {
            return Err(MttError::Structural(format!(
                "association explains {} observations but the scan has {}",
                z.k_y(),
                scan.len()
            )));
        }
        if let Some(p) = preds {
            if p.len() != z.k_x() {
                return Err(MttError::Structural(format!(
                    "{} predictions for {} targets",
                    p.len(),
                    z.k_x()
                )));
            }
        }
        let t = self.t + 1;
        let obs = z.observation_of_targets();
        let point = |k: usize| obs[k].map(|j| scan.points[j].as_slice());

        // Dying targets are evaluated at their last filter and retired; the
        // survivors move on in their original order.
        let mut survivors = Vec::with_capacity(z.k_s());
        for (target, &survives) in std::mem::take(&mut self.targets).into_iter().zip(&z.c_s) {
            if survives {
                survivors.push(target);
            } else {
                for (vars, acc) in target.vars.iter().zip(self.acc.banks.iter_mut()) {
                    vars.eval_into(&target.filt, 1.0, acc);
                }
            }
        }

        // Association-only statistics.
        let dy = self.dy;
        let mut s8 = DMatrix::zeros(dy, dy);
        for &j in &z.a {
            let y = &scan.points[j];
            s8.ger(1.0, y, y, 1.0);
        }
        let counts = [
            z.k_d() as f64,
            z.k_x() as f64,
            z.k_s() as f64,
            z.k_x_prev() as f64,
            z.k_b as f64,
            z.k_f as f64,
            1.0,
        ];
        for (acc, blend) in self.acc.banks.iter_mut().zip(blends) {
            acc.scale(blend.carry);
            acc.s8 += &s8 * blend.fresh;
            for (s, c) in acc.scalars_mut().into_iter().zip(counts) {
                *s += blend.fresh * c;
            }
        }

        let smoothing = self.tracks_statistics();
        let mut next = Vec::with_capacity(z.k_x());
        for (k, mut target) in survivors.into_iter().enumerate() {
            let pred = match preds {
                Some(p) => p[k].clone(),
                None => kalman::predict(&target.filt, psi),
            };
            let y = point(k);
            if smoothing {
                let bp = kalman::backward_params(&target.filt, psi)
                    .map_err(|e| e.context(format!("target {k} at t={t}")))?;
                for (vars, blend) in target.vars.iter_mut().zip(blends) {
                    vars.step(&bp, y, *blend);
                }
            }
            let y_vec = obs[k].map(|j| &scan.points[j]);
            target.filt = kalman::update(&pred, y_vec, psi)
                .map_err(|e| e.context(format!("target {k} at t={t}")))?
                .0;
            next.push(target);
        }
        let k_s = z.k_s();
        for slot in 0..z.k_b {
            let k = k_s + slot;
            let pred = match preds {
                Some(p) => p[k].clone(),
                None => GaussianMoments::prior(psi),
            };
            let y = point(k);
            let vars = self
                .masks
                .iter()
                .zip(blends)
                .map(|(mask, blend)| RecursionVars::init(self.dx, self.dy, *mask, y, blend.fresh))
                .collect();
            let y_vec = obs[k].map(|j| &scan.points[j]);
            let filt = kalman::update(&pred, y_vec, psi)
                .map_err(|e| e.context(format!("new target {slot} at t={t}")))?
                .0;
            next.push(TargetSmoother {
                filt,
                vars,
                label: TargetLabel { born: t, slot },
            });
        }
        self.targets = next;
        self.t = t;
        Ok(())
    }

    /// Current expected statistics per bank: dead and association-only parts
    /// plus the evaluation of every alive target.
    pub fn totals(&self) -> Vec<SufficientStatSet> {
        let mut out = self.acc.banks.clone();
        for target in &self.targets {
            for (vars, o) in target.vars.iter().zip(out.iter_mut()) {
                vars.eval_into(&target.filt, 1.0, o);
            }
        }
        out
    }

    /// `out[b] += weight * totals()[b]` without materializing the totals.
    pub fn add_totals_into(&self, weight: f64, out: &mut [SufficientStatSet]) {
        for (acc, o) in self.acc.banks.iter().zip(out.iter_mut()) {
            o.add_scaled(acc, weight);
        }
        for target in &self.targets {
            for (vars, o) in target.vars.iter().zip(out.iter_mut()) {
                vars.eval_into(&target.filt, weight, o);
            }
        }
    }
}

/// One multi-target step; see [`MttState::step`].
pub fn mtt_step(
    state: &mut MttState,
    z: &AssociationRecord,
    scan: &ObservationScan,
    psi: &GlssmParams,
    blends: &[Blend],
) -> Result<()> {
    state.step(z, scan, psi, blends, None)
}

/// Expected statistics of every bank; see [`MttState::totals`].
pub fn total_expectations(state: &MttState) -> Vec<SufficientStatSet> {
    state.totals()
}

/// Run a plain single-bank pass over known associations and return the
/// resulting expected statistics.
pub fn expectations_given_associations(
    scans: &[ObservationScan],
    records: &[AssociationRecord],
    psi: &GlssmParams,
) -> Result<SufficientStatSet> {
    let mut state = MttState::new(psi.dx(), psi.dy(), vec![StatMask::ALL]);
    for (t, (scan, z)) in scans.iter().zip(records).enumerate() {
        state
            .step(z, scan, psi, &[Blend::PLAIN], None)
            .map_err(|e| e.context(format!("t={}", t + 1)))?;
    }
    Ok(state.totals().pop().expect("one bank"))
}
