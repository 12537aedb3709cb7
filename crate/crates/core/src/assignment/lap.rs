//! Rectangular linear assignment by shortest augmenting paths.
//!
//! Minimizes `sum_i c[i][x(i)]` over injective maps `x` from rows to columns
//! (rows <= columns). Infinite costs mark forbidden edges. Dual variables keep
//! reduced costs non-negative so each augmentation is a Dijkstra-like search
//! over the columns not yet labelled.

/// Minimum-cost row-to-column assignment of the row-major `rows x cols` matrix
/// `cost`, or `None` if every complete assignment uses a forbidden edge.
#[cfg(test)]
pub fn solve(cost: &[f64], rows: usize, cols: usize) -> Option<Vec<usize>> {
    let mut ws = Workspace::default();
    ws.solve(cost, rows, cols).map(<[usize]>::to_vec)
}

const NONE: usize = usize::MAX;

/// Buffers of the solver, reusable across calls to avoid reallocating them
/// for every small problem.
#[derive(Debug, Default)]
pub struct Workspace {
    u: Vec<f64>,
    v: Vec<f64>,
    shortest: Vec<f64>,
    path: Vec<usize>,
    col4row: Vec<usize>,
    row4col: Vec<usize>,
    seen_row: Vec<bool>,
    seen_col: Vec<bool>,
    remaining: Vec<usize>,
}

fn reset<T: Clone>(buf: &mut Vec<T>, n: usize, value: T) {
    buf.clear();
    buf.resize(n, value);
}

impl Workspace {
    /// As [`solve`]; the returned slice borrows the workspace.
    pub fn solve(&mut self, cost: &[f64], rows: usize, cols: usize) -> Option<&[usize]> {
        assert!(
            rows <= cols,
            "assignment needs at least as many columns as rows"
        );
        assert_eq!(cost.len(), rows * cols);
        reset(&mut self.u, rows, 0.0);
        reset(&mut self.v, cols, 0.0);
        reset(&mut self.shortest, cols, f64::INFINITY);
        reset(&mut self.path, cols, NONE);
        reset(&mut self.col4row, rows, NONE);
        reset(&mut self.row4col, cols, NONE);
        reset(&mut self.seen_row, rows, false);
        reset(&mut self.seen_col, cols, false);
        reset(&mut self.remaining, cols, 0);
        if rows == 0 {
            return Some(&self.col4row);
        }
        let Workspace {
            u,
            v,
            shortest,
            path,
            col4row,
            row4col,
            seen_row,
            seen_col,
            remaining,
        } = self;

        for cur_row in 0..rows {
            shortest.fill(f64::INFINITY);
            seen_row.fill(false);
            seen_col.fill(false);
            // Reverse order so that ties favour low column indices.
            for (k, r) in remaining.iter_mut().enumerate() {
                *r = cols - 1 - k;
            }
            let mut num_remaining = cols;
            let mut min_val = 0.0;
            let mut i = cur_row;
            let sink = loop {
                seen_row[i] = true;
                let mut lowest = f64::INFINITY;
                let mut index = NONE;
                for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                    let r = min_val + cost[i * cols + j] - u[i] - v[j];
                    if r < shortest[j] {
                        path[j] = i;
                        shortest[j] = r;
                    }
                    if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                        lowest = shortest[j];
                        index = it;
                    }
                }
                min_val = lowest;
                if !min_val.is_finite() {
                    return None;
                }
                let j = remaining[index];
                seen_col[j] = true;
                num_remaining -= 1;
                remaining[index] = remaining[num_remaining];
                if row4col[j] == NONE {
                    break j;
                }
                i = row4col[j];
            };

            u[cur_row] += min_val;
            for r in 0..rows {
                if seen_row[r] && r != cur_row {
                    u[r] += min_val - shortest[col4row[r]];
                }
            }
            for c in 0..cols {
                if seen_col[c] {
                    v[c] -= min_val - shortest[c];
                }
            }

            let mut j = sink;
            loop {
                let r = path[j];
                row4col[j] = r;
                std::mem::swap(&mut col4row[r], &mut j);
                if r == cur_row {
                    break;
                }
            }
        }
        Some(col4row.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(cost: &[f64], rows: usize, cols: usize) -> Option<f64> {
        fn rec(c: &[f64], rows: usize, cols: usize, r: usize, used: &mut [bool]) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] && c[r * cols + j].is_finite() {
                    used[j] = true;
                    best = best.min(c[r * cols + j] + rec(c, rows, cols, r + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let b = rec(cost, rows, cols, 0, &mut vec![false; cols]);
        b.is_finite().then_some(b)
    }

    fn total(cost: &[f64], cols: usize, x: &[usize]) -> f64 {
        x.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum()
    }

    #[test]
    fn small_square() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let x = solve(&c, 3, 3).unwrap();
        assert_eq!(x, vec![1, 0, 2]);
    }

    #[test]
    fn all_forbidden_is_infeasible() {
        let inf = f64::INFINITY;
        assert_eq!(solve(&[inf, inf], 1, 2), None);
        // Two rows competing for the only allowed column.
        assert_eq!(solve(&[0.0, inf, 0.0, inf], 2, 2), None);
    }

    #[test]
    fn empty_problem() {
        assert_eq!(solve(&[], 0, 3), Some(vec![]));
    }

    proptest! {
        #[test]
        fn optimal_on_random_matrices(
            rows in 1usize..5,
            extra in 0usize..4,
            seed in proptest::collection::vec((-10.0f64..10.0, 0u8..10), 64),
        ) {
            let cols = rows + extra;
            let cost: Vec<f64> = (0..rows * cols)
                .map(|k| {
                    let (c, f) = seed[k];
                    if f == 0 { f64::INFINITY } else { c }
                })
                .collect();
            match (solve(&cost, rows, cols), brute(&cost, rows, cols)) {
                (None, None) => {}
                (Some(x), Some(b)) => {
                    let mut used = vec![false; cols];
                    for &j in &x {
                        prop_assert!(!used[j]);
                        used[j] = true;
                    }
                    prop_assert!((total(&cost, cols, &x) - b).abs() < 1e-9);
                }
                (a, b) => prop_assert!(false, "feasibility mismatch: {:?} vs {:?}", a, b),
            }
        }
    }
}
