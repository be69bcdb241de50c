use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; gated pairs are left out.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the kept pairs' costs, in row order.
    pub cost: f64,
}

/// Minimum-cost one-to-one assignment of `min(n, m)` pairs.
///
/// `f64::INFINITY` marks a forbidden pair. Forbidden entries are replaced by a
/// sentinel larger than any finite total, so the solver uses as few of them as
/// possible; any that remain in the optimum are dropped from the output.
pub fn hungarian_solve(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::Empty("cost matrix".into()));
    }
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch("ragged cost matrix".into()));
    }
    let mut finite_total = 0.0f64;
    for v in cost.iter().flatten() {
        if v.is_nan() || *v == f64::NEG_INFINITY {
            return Err(Error::NonFinite("cost entry".into()));
        }
        if v.is_finite() {
            finite_total += v.abs();
        }
    }
    let sentinel = 2.0 * finite_total + 1.0;
    let entry = |i: usize, j: usize| {
        let v = cost[i][j];
        if v.is_finite() {
            v
        } else {
            sentinel
        }
    };

    let raw = if n <= m {
        solve_wide(n, m, entry)
    } else {
        solve_wide(m, n, |i, j| entry(j, i)).into_iter().map(|(c, r)| (r, c)).collect()
    };
    let mut pairs: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| cost[i][j].is_finite()).collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(Assignment { pairs, cost: total })
}

/// Shortest augmenting paths with row/column potentials, `n <= m`.
fn solve_wide(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based with column 0 as the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| row_of[j] != 0).map(|j| (row_of[j] - 1, j - 1)).collect()
}
