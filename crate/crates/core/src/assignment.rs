//! Optimal one-to-one assignment (Hungarian / Kuhn-Munkres with potentials).

use crate::scalar::Scalar;

/// Minimum-cost assignment of every row of a dense `rows x cols` matrix with
/// `rows <= cols`. Returns the column chosen for each row.
fn hungarian_rows<T: Scalar>(cost: &[Vec<T>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    debug_assert!(n <= cols);
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=cols {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Solves a gated assignment problem. `cost[r][c]` is `None` for pairs that
/// failed the gate; such pairs are never returned.
///
/// Among all one-to-one matchings that use only admissible pairs, the result
/// has the largest number of pairs and, among those, the smallest total cost.
/// Pairs are returned sorted by row.
pub fn solve_gated<T: Scalar>(cost: &[Vec<Option<T>>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    let max_cost = cost
        .iter()
        .flatten()
        .flatten()
        .fold(T::zero(), |m, &c| m.max(c));
    // a bonus larger than any total-cost difference makes one more pair
    // always preferable to any cheaper but smaller matching
    let bonus = (max_cost + T::one()) * T::of((rows.min(cols) + 1) as f64);
    let transformed = |r: usize, c: usize| cost[r][c].map_or(T::zero(), |v| v - bonus);

    let mut pairs = if rows <= cols {
        let dense: Vec<Vec<T>> = (0..rows)
            .map(|r| (0..cols).map(|c| transformed(r, c)).collect())
            .collect();
        hungarian_rows(&dense, cols)
            .into_iter()
            .enumerate()
            .collect::<Vec<_>>()
    } else {
        let dense: Vec<Vec<T>> = (0..cols)
            .map(|c| (0..rows).map(|r| transformed(r, c)).collect())
            .collect();
        hungarian_rows(&dense, rows)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>()
    };
    pairs.retain(|&(r, c)| cost[r][c].is_some());
    pairs.sort_unstable();
    pairs
}
