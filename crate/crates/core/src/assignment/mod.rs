//! Target-to-observation association scores and their L best assignments.
//!
//! Rows of the cost matrix are targets. The first `k_y` columns are the
//! observations of the scan; column `k_y + k` is target `k`'s private
//! "missed" column. Entries are log-likelihood contributions (higher is better);
//! `-inf` marks impossible pairings.

mod lap;
mod murty;

use crate::kalman::PredictiveDensity;
use crate::simulator::ObservationScan;

pub use murty::murty_lbest;

/// Row-major `k_x x (k_y + k_x)` association score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "cost matrix data has the wrong length"
        );
        assert!(
            rows <= cols,
            "cost matrix needs at least as many columns as rows"
        );
        CostMatrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Number of observation columns, `cols - rows`.
    pub fn k_y(&self) -> usize {
        self.cols - self.rows
    }

    /// Score of a complete assignment: the row terms summed in ascending order,
    /// so that assignments with the same multiset of terms tie exactly.
    pub fn score(&self, alpha: &[usize]) -> f64 {
        let mut terms: Vec<f64> = alpha
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .collect();
        terms.sort_by(|a, b| a.total_cmp(b));
        terms.iter().sum()
    }
}

/// One ranked assignment: `alpha[k]` is the column of target `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub alpha: Vec<usize>,
    pub score: f64,
}

/// Association scores of the predicted targets against a scan: a detection
/// contributes `ln p_d + ln N(y; G mu, G Sigma G^T + V)`, a miss
/// `ln((1 - p_d) lambda_f / |Y|)`.
pub fn build_cost_matrix(
    preds: &[PredictiveDensity],
    scan: &ObservationScan,
    p_d: f64,
    lambda_f: f64,
    volume: f64,
) -> CostMatrix {
    let k_x = preds.len();
    let k_y = scan.len();
    let cols = k_y + k_x;
    let ln_pd = p_d.ln();
    let miss = (1.0 - p_d).ln() + (lambda_f / volume).ln();
    let mut data = vec![f64::NEG_INFINITY; k_x * cols];
    for (k, pred) in preds.iter().enumerate() {
        let row = &mut data[k * cols..(k + 1) * cols];
        if p_d > 0.0 {
            for (j, y) in scan.points.iter().enumerate() {
                row[j] = ln_pd + pred.loglik(y.as_slice());
            }
        }
        row[k_y + k] = miss;
    }
    CostMatrix::new(k_x, cols, data)
}

/// The single best assignment, if any is feasible.
pub fn best_assignment(d: &CostMatrix) -> Option<Assignment> {
    murty_lbest(d, 1).into_iter().next()
}

/// Detection indicators and detected-target observation indices of an
/// assignment against a scan of `k_y` points.
pub fn decode_association(alpha: &[usize], k_y: usize) -> (Vec<bool>, Vec<usize>) {
    let c_d: Vec<bool> = alpha.iter().map(|&j| j < k_y).collect();
    let a = alpha.iter().copied().filter(|&j| j < k_y).collect();
    (c_d, a)
}

/// Inverse of [`decode_association`]: undetected target `k` takes its missed
/// column `k_y + k`.
pub fn encode_association(c_d: &[bool], a: &[usize], k_y: usize) -> Vec<usize> {
    let mut obs = a.iter();
    c_d.iter()
        .enumerate()
        .map(|(k, &d)| {
            if d {
                *obs.next().expect("one observation per detected target")
            } else {
                k_y + k
            }
        })
        .collect()
}
