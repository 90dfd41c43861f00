//! Maximum-profit one-to-one assignment (Kuhn–Munkres with potentials).
//!
//! Rectangular inputs are padded to a square with zero-profit dummies. Among
//! optimal assignments the lexicographically smallest padded permutation is
//! returned, found by fixing rows in order and re-solving the remainder.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column of each original row, `None` when the row got a dummy column.
    pub row_to_col: Vec<Option<usize>>,
    /// Full permutation on the padded square matrix.
    pub padded: Vec<usize>,
    pub total_profit: f64,
}

impl Assignment {
    /// Row assigned to each original column, `None` when matched to a dummy row.
    pub fn col_to_row(&self, cols: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cols];
        for (r, c) in self.row_to_col.iter().enumerate() {
            if let Some(c) = *c {
                out[c] = Some(r);
            }
        }
        out
    }
}

/// Minimum-cost perfect matching on an `n × n` cost matrix; returns the column
/// of each row.
fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation; column 0 is a virtual start
    let inf = f64::INFINITY;
    let mut u = vec![0f64; n + 1];
    let mut v = vec![0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Best profit on the sub-square given by `rows` × `cols`; returns the
/// assignment (as positions into `cols`) and its profit.
fn solve_sub(profit: &[f64], n: usize, rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let m = rows.len();
    let mut cost = Vec::with_capacity(m * m);
    for &r in rows {
        for &c in cols {
            cost.push(-profit[r * n + c]);
        }
    }
    let perm = min_cost_assignment(&cost, m);
    let total = rows
        .iter()
        .zip(&perm)
        .map(|(&r, &k)| profit[r * n + cols[k]])
        .sum();
    (perm, total)
}

pub fn hungarian_match(profit: &[Vec<f64>]) -> Result<Assignment> {
    let rows = profit.len();
    let cols = profit.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::parameter("profit matrix is empty"));
    }
    if profit.iter().any(|r| r.len() != cols) {
        return Err(Error::validation("profit matrix rows differ in length"));
    }
    if profit.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("profit matrix has a non-finite entry"));
    }
    let n = rows.max(cols);
    let mut square = vec![0f64; n * n];
    for (r, row) in profit.iter().enumerate() {
        square[r * n..r * n + cols].copy_from_slice(row);
    }

    let all: Vec<usize> = (0..n).collect();
    let (perm, best) = solve_sub(&square, n, &all, &all);
    let scale = square.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let tol = 1e-12 * scale;

    // lexicographic refinement
    let mut current = perm;
    let mut fixed_profit = 0.0;
    let mut free_cols: Vec<usize> = all.clone();
    let mut chosen = Vec::with_capacity(n);
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let target_col = current[i];
        let mut pick = target_col;
        let mut pick_rest: Option<Vec<usize>> = None;
        for &c in free_cols.iter().take_while(|&&c| c < target_col) {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let (sub, sub_profit) = solve_sub(&square, n, &rest_rows, &rest_cols);
            if fixed_profit + square[i * n + c] + sub_profit >= best - tol {
                pick = c;
                pick_rest = Some(sub.into_iter().map(|k| rest_cols[k]).collect());
                break;
            }
        }
        if let Some(rest) = pick_rest {
            for (r, c) in (i + 1..n).zip(rest) {
                current[r] = c;
            }
        }
        chosen.push(pick);
        fixed_profit += square[i * n + pick];
        free_cols.retain(|&x| x != pick);
    }

    let row_to_col = chosen[..rows]
        .iter()
        .map(|&c| (c < cols).then_some(c))
        .collect();
    let total_profit = (0..rows)
        .filter(|&r| chosen[r] < cols)
        .map(|r| profit[r][chosen[r]])
        .sum();
    Ok(Assignment {
        row_to_col,
        padded: chosen,
        total_profit,
    })
}
