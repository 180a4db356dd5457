//! Minimum-cost assignment on square cost matrices.
//!
//! Site matching solves one assignment per species class. Classes up to
//! [`EXACT_SOLVER_LIMIT`] atoms use the exact O(n³) Hungarian algorithm;
//! larger classes fall back to a greedy seed refined by pairwise swaps, and
//! the caller is told which solver ran.

use serde::{Deserialize, Serialize};

/// Largest class size solved exactly; beyond it the greedy solver runs.
pub const EXACT_SOLVER_LIMIT: usize = 64;

/// Which assignment algorithm produced a matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentSolver {
    /// Exact Hungarian solution.
    Exact,
    /// Greedy nearest-neighbor seed with 2-swap refinement.
    Greedy,
}

/// Solves the square min-cost assignment problem, returning the column
/// assigned to each row and the solver used.
///
/// Costs must be finite. An empty matrix yields an empty assignment.
pub fn solve_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, AssignmentSolver) {
    let n = cost.len();
    debug_assert!(cost.iter().all(|row| row.len() == n));
    debug_assert!(cost.iter().flatten().all(|c| c.is_finite()));
    if n == 0 {
        return (Vec::new(), AssignmentSolver::Exact);
    }
    if n <= EXACT_SOLVER_LIMIT {
        (hungarian(cost), AssignmentSolver::Exact)
    } else {
        (greedy_two_swap(cost), AssignmentSolver::Greedy)
    }
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Classic shortest-augmenting-path Hungarian algorithm with potentials,
/// O(n³). Indices are offset by one internally so column 0 marks "free".
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the found path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] != 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Greedy row-by-row nearest assignment, then 2-swap passes until no swap
/// improves the total cost.
fn greedy_two_swap(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut taken = vec![false; n];
    let mut assignment = vec![0usize; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, &c) in cost[i].iter().enumerate() {
            if !taken[j] && c < best {
                best = c;
                best_j = j;
            }
        }
        taken[best_j] = true;
        assignment[i] = best_j;
    }
    loop {
        let mut improved = false;
        for i in 0..n {
            for k in (i + 1)..n {
                let (a, b) = (assignment[i], assignment[k]);
                if cost[i][b] + cost[k][a] < cost[i][a] + cost[k][b] - 1e-15 {
                    assignment.swap(i, k);
                    improved = true;
                }
            }
        }
        if !improved {
            return assignment;
        }
    }
}
