//! Murty's ranking of assignments by partitioning the solution space.
//!
//! Each node of the search owns a subproblem: a prefix of rows fixed to given
//! columns and a set of forbidden (row, column) pairs. Popping the best node
//! and splitting its remaining rows one at a time yields disjoint children
//! whose union is the parent's space minus the parent's own solution.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{lap, Assignment, CostMatrix};

#[derive(Debug)]
struct Node {
    alpha: Vec<usize>,
    score: f64,
    /// Rows `0..fixed` are pinned to `alpha`.
    fixed: usize,
    forbidden: Vec<(usize, usize)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Higher score first, then lexicographically smaller assignment.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.alpha.cmp(&self.alpha))
    }
}

/// Buffers shared by the subproblems of one search.
#[derive(Default)]
struct Scratch {
    col_used: Vec<bool>,
    free_cols: Vec<usize>,
    cost: Vec<f64>,
    lap: lap::Workspace,
}

/// Best assignment of the subproblem that pins rows `0..fixed` to
/// `prefix[..fixed]` and excludes the `forbidden` pairs.
fn solve_constrained(
    d: &CostMatrix,
    prefix: &[usize],
    fixed: usize,
    forbidden: &[(usize, usize)],
    scratch: &mut Scratch,
) -> Option<Vec<usize>> {
    let (n, m) = (d.rows(), d.cols());
    let Scratch {
        col_used,
        free_cols,
        cost,
        lap,
    } = scratch;
    col_used.clear();
    col_used.resize(m, false);
    for &j in &prefix[..fixed] {
        col_used[j] = true;
    }
    free_cols.clear();
    free_cols.extend((0..m).filter(|&j| !col_used[j]));
    let rows = n - fixed;
    let cols = free_cols.len();
    cost.clear();
    for i in fixed..n {
        for &j in free_cols.iter() {
            cost.push(-d.get(i, j));
        }
    }
    for &(i, j) in forbidden {
        if i >= fixed {
            if let Ok(c) = free_cols.binary_search(&j) {
                cost[(i - fixed) * cols + c] = f64::INFINITY;
            }
        }
    }
    let sub = lap.solve(cost, rows, cols)?;
    let mut alpha = Vec::with_capacity(n);
    alpha.extend_from_slice(&prefix[..fixed]);
    alpha.extend(sub.iter().map(|&c| free_cols[c]));
    Some(alpha)
}

/// The `l` highest-scoring feasible assignments of `d`, best first.
///
/// Ties are ordered by lexicographically smallest assignment. To make that
/// order independent of the search path, ties with the `l`-th score are
/// explored (up to `4 l` extra nodes) before truncating.
pub fn murty_lbest(d: &CostMatrix, l: usize) -> Vec<Assignment> {
    if l == 0 {
        return Vec::new();
    }
    let n = d.rows();
    let mut scratch = Scratch::default();
    let mut heap = BinaryHeap::new();
    if let Some(alpha) = solve_constrained(d, &[], 0, &[], &mut scratch) {
        heap.push(Node {
            score: d.score(&alpha),
            alpha,
            fixed: 0,
            forbidden: Vec::new(),
        });
    }
    let mut out: Vec<Node> = Vec::with_capacity(l);
    let mut extra = 0;
    while let Some(node) = heap.pop() {
        if out.len() >= l {
            if node.score != out[l - 1].score || extra >= 4 * l {
                break;
            }
            extra += 1;
        }
        for r in node.fixed..n {
            let mut forbidden: Vec<(usize, usize)> = node
                .forbidden
                .iter()
                .copied()
                .filter(|&(i, _)| i >= r)
                .collect();
            forbidden.push((r, node.alpha[r]));
            if let Some(alpha) = solve_constrained(d, &node.alpha, r, &forbidden, &mut scratch) {
                heap.push(Node {
                    score: d.score(&alpha),
                    alpha,
                    fixed: r,
                    forbidden,
                });
            }
        }
        out.push(node);
    }
    out.sort_by(|a, b| b.cmp(a));
    out.truncate(l);
    out.into_iter()
        .map(|n| Assignment {
            alpha: n.alpha,
            score: n.score,
        })
        .collect()
}
