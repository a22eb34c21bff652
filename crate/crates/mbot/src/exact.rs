//! Exact discrete OT between uniform, equal-size point clouds.
//!
//! For equal-size uniform marginals an optimal coupling is a permutation
//! matrix scaled by `1/m`, so the problem is a linear assignment. Two
//! routes are provided: a shortest-augmenting-path solver on the dense
//! cost matrix, and the sort shortcut for 1D supports. Among co-optimal
//! assignments the lexicographically smallest permutation is returned, so
//! plans are reproducible across runs and platforms.

use crate::cloud::DiscreteDistribution;
use crate::cost::CostSpec;
use crate::error::{OtError, Result};
use crate::plan::TransportPlan;

/// 1D shortcut: sort both supports and match in order. Optimal for costs
/// that are convex in |x - y| (all supported kinds). The returned plan is
/// expressed in the original index order.
pub fn solve_exact_1d(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
) -> Result<(f64, TransportPlan)> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(OtError::DimensionMismatch(a.dim().max(b.dim()), 1));
    }
    if a.n() != b.n() {
        return Err(OtError::SizeMismatch(a.n(), b.n()));
    }
    let n = a.n();
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    // stable tie-break on the original index keeps the matching deterministic
    ia.sort_by(|&p, &q| a.point(p)[0].total_cmp(&a.point(q)[0]).then(p.cmp(&q)));
    ib.sort_by(|&p, &q| b.point(p)[0].total_cmp(&b.point(q)[0]).then(p.cmp(&q)));
    let mut perm = vec![0usize; n];
    let mut total = 0.0;
    for r in 0..n {
        total += cost.evaluate(a.point(ia[r]), b.point(ib[r]));
        perm[ia[r]] = ib[r];
    }
    let value = total / n as f64;
    Ok((value, TransportPlan::from_permutation(perm, value)))
}

/// Exact assignment between equal-size clouds of any dimension.
pub fn solve_exact_assignment(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
) -> Result<(f64, TransportPlan)> {
    if a.n() != b.n() {
        return Err(OtError::SizeMismatch(a.n(), b.n()));
    }
    let cost_matrix = cost.matrix(a, b)?;
    Ok(solve_assignment_on_cost(&cost_matrix, a.n(), true))
}

/// Assignment solve on a prebuilt row-major cost matrix. `lex_tie_break`
/// resolves co-optimal assignments to the lexicographically smallest
/// permutation; without it the (still deterministic) augmenting-path
/// solution is kept, which is what the batch kernels use on hot paths.
pub fn solve_assignment_on_cost(cost: &[f64], m: usize, lex_tie_break: bool) -> (f64, TransportPlan) {
    let mut ws = AssignmentWorkspace::new(m);
    let sigma = ws.solve(cost, m, lex_tie_break);
    let value = assignment_value(cost, m, &sigma);
    (value, TransportPlan::from_permutation(sigma, value))
}

pub(crate) fn assignment_value(cost: &[f64], m: usize, sigma: &[usize]) -> f64 {
    let total: f64 = sigma.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    total / m as f64
}

/// Reusable buffers for the augmenting-path solver, so batch kernels can
/// solve many small problems without reallocating.
pub(crate) struct AssignmentWorkspace {
    u: Vec<f64>,
    v: Vec<f64>,
    shortest: Vec<f64>,
    path: Vec<usize>,
    sr: Vec<bool>,
    sc: Vec<bool>,
    remaining: Vec<usize>,
    col4row: Vec<usize>,
    row4col: Vec<usize>,
}

const UNASSIGNED: usize = usize::MAX;

impl AssignmentWorkspace {
    pub fn new(capacity: usize) -> Self {
        AssignmentWorkspace {
            u: Vec::with_capacity(capacity),
            v: Vec::with_capacity(capacity),
            shortest: Vec::with_capacity(capacity),
            path: Vec::with_capacity(capacity),
            sr: Vec::with_capacity(capacity),
            sc: Vec::with_capacity(capacity),
            remaining: Vec::with_capacity(capacity),
            col4row: Vec::with_capacity(capacity),
            row4col: Vec::with_capacity(capacity),
        }
    }

    /// Minimum-cost perfect assignment; returns `sigma` with row `i`
    /// matched to column `sigma[i]`.
    pub fn solve(&mut self, cost: &[f64], m: usize, lex_tie_break: bool) -> Vec<usize> {
        debug_assert_eq!(cost.len(), m * m);
        self.reset(m);
        for cur_row in 0..m {
            self.augment_row(cost, m, cur_row);
        }
        let sigma: Vec<usize> = self.col4row.clone();
        if lex_tie_break {
            self.lex_smallest_optimal(cost, m, sigma)
        } else {
            sigma
        }
    }

    fn reset(&mut self, m: usize) {
        self.u.clear();
        self.u.resize(m, 0.0);
        self.v.clear();
        self.v.resize(m, 0.0);
        self.col4row.clear();
        self.col4row.resize(m, UNASSIGNED);
        self.row4col.clear();
        self.row4col.resize(m, UNASSIGNED);
        self.shortest.resize(m, f64::INFINITY);
        self.path.resize(m, 0);
        self.sr.resize(m, false);
        self.sc.resize(m, false);
        self.remaining.resize(m, 0);
    }

    /// Dijkstra-style search for the shortest augmenting path rooted at
    /// `cur_row`, followed by the dual update and augmentation.
    fn augment_row(&mut self, cost: &[f64], m: usize, cur_row: usize) {
        self.shortest.iter_mut().for_each(|s| *s = f64::INFINITY);
        self.sr.iter_mut().for_each(|s| *s = false);
        self.sc.iter_mut().for_each(|s| *s = false);
        for (idx, r) in self.remaining.iter_mut().enumerate() {
            *r = idx;
        }
        let mut num_remaining = m;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink;
        loop {
            self.sr[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = UNASSIGNED;
            for it in 0..num_remaining {
                let j = self.remaining[it];
                let reduced = min_val + cost[i * m + j] - self.u[i] - self.v[j];
                if reduced < self.shortest[j] {
                    self.shortest[j] = reduced;
                    self.path[j] = i;
                }
                if self.shortest[j] < lowest
                    || (self.shortest[j] == lowest && self.row4col[j] == UNASSIGNED)
                {
                    lowest = self.shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            let j = self.remaining[index];
            self.sc[j] = true;
            num_remaining -= 1;
            self.remaining.swap(index, num_remaining);
            if self.row4col[j] == UNASSIGNED {
                sink = j;
                break;
            }
            i = self.row4col[j];
        }
        // dual updates keep every reduced cost nonnegative
        self.u[cur_row] += min_val;
        for row in 0..m {
            if self.sr[row] && row != cur_row {
                self.u[row] += min_val - self.shortest[self.col4row[row]];
            }
        }
        for col in 0..m {
            if self.sc[col] {
                self.v[col] -= min_val - self.shortest[col];
            }
        }
        // flip the alternating path ending at the sink
        let mut j = sink;
        loop {
            let row = self.path[j];
            self.row4col[j] = row;
            std::mem::swap(&mut self.col4row[row], &mut j);
            if row == cur_row {
                break;
            }
        }
    }

    /// Among all optimal assignments, pick the lexicographically smallest
    /// permutation. By complementary slackness an assignment is optimal
    /// exactly when all its edges are tight for the optimal duals, so the
    /// search runs on the tight-edge bipartite graph.
    fn lex_smallest_optimal(&self, cost: &[f64], m: usize, sigma: Vec<usize>) -> Vec<usize> {
        let max_abs = cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
        let tol = 1e-9 * (1.0 + max_abs);
        let tight: Vec<Vec<usize>> = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| cost[i * m + j] - self.u[i] - self.v[j] <= tol)
                    .collect()
            })
            .collect();
        if tight.iter().all(|t| t.len() == 1) {
            return sigma; // unique optimum
        }
        let mut used_col = vec![false; m];
        let mut result = vec![UNASSIGNED; m];
        for i in 0..m {
            let mut fixed = false;
            for &j in &tight[i] {
                if used_col[j] {
                    continue;
                }
                used_col[j] = true;
                if rows_matchable(&tight, m, i + 1, &used_col) {
                    result[i] = j;
                    fixed = true;
                    break;
                }
                used_col[j] = false;
            }
            if !fixed {
                // tolerance misclassified the tight graph; keep the solver's
                // deterministic answer
                return sigma;
            }
        }
        result
    }
}

/// Can rows `from..m` be perfectly matched into the unused columns of the
/// tight graph? Plain augmenting-path matching.
fn rows_matchable(tight: &[Vec<usize>], m: usize, from: usize, used_col: &[bool]) -> bool {
    let mut match_col = vec![UNASSIGNED; m];
    let mut visited = vec![false; m];
    for i in from..m {
        visited.iter_mut().for_each(|v| *v = false);
        if !try_augment(tight, i, used_col, &mut match_col, &mut visited) {
            return false;
        }
    }
    true
}

fn try_augment(
    tight: &[Vec<usize>],
    i: usize,
    used_col: &[bool],
    match_col: &mut [usize],
    visited: &mut [bool],
) -> bool {
    for &j in &tight[i] {
        if used_col[j] || visited[j] {
            continue;
        }
        visited[j] = true;
        if match_col[j] == UNASSIGNED || try_augment(tight, match_col[j], used_col, match_col, visited)
        {
            match_col[j] = i;
            return true;
        }
    }
    false
}
