//! Best-first branch-and-bound over the simplex relaxation.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::simplex::solve_relaxation;
use super::{LinearProgram, Sense, Solution, SolverError, Status, INT_TOL};
use crate::math::{abs, ceil, floor, fract, round};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    /// Maximum number of relaxations solved before giving up.
    pub node_limit: usize,
    /// Distance from an integer below which a value counts as integral.
    pub int_tol: f64,
    /// Relative gap used to prune nodes against the incumbent.
    pub rel_gap: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { node_limit: 1_000_000, int_tol: INT_TOL, rel_gap: 1e-9 }
    }
}

/// Solves `lp` with the default [`MilpOptions`].
pub fn solve_milp(lp: &LinearProgram) -> Result<Solution, SolverError> {
    solve_milp_with(lp, &MilpOptions::default())
}

struct Node {
    /// Relaxation bound expressed as a minimization value.
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
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
    /// Max-heap order: the smallest bound first, then the newest node so ties
    /// dive rather than sweep.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(self.seq.cmp(&other.seq))
    }
}

/// Solves `lp` to proven optimality, honouring integrality of integer and
/// binary variables. Branches on the most fractional variable (lowest index
/// on ties) and always expands the open node with the best bound.
pub fn solve_milp_with(lp: &LinearProgram, opts: &MilpOptions) -> Result<Solution, SolverError> {
    lp.validate()?;
    let n = lp.num_vars();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
    let mut upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();
    for j in 0..n {
        if lp.is_integer(j) {
            lower[j] = ceil(lower[j] - opts.int_tol);
            upper[j] = floor(upper[j] + opts.int_tol);
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node { bound: f64::NEG_INFINITY, seq, lower, upper });
    let mut nodes = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if pruned(node.bound, *best, opts.rel_gap) {
                continue;
            }
        }
        if nodes >= opts.node_limit {
            return Err(SolverError::NodeLimitExceeded(opts.node_limit));
        }
        nodes += 1;
        let relax = solve_relaxation(lp, &node.lower, &node.upper)?;
        match relax.status {
            Status::Infeasible => continue,
            Status::Unbounded => {
                // An unbounded relaxation of a bounded-integer problem means
                // the continuous part is unbounded whenever any point is
                // feasible.
                return Ok(Solution::without_point(Status::Unbounded, nodes));
            }
            Status::Optimal => {}
        }
        let value = sign * relax.objective;
        if let Some((best, _)) = &incumbent {
            if pruned(value, *best, opts.rel_gap) {
                continue;
            }
        }

        let mut branch_var = None;
        let mut best_frac = opts.int_tol;
        for j in 0..n {
            if !lp.is_integer(j) {
                continue;
            }
            let f = fract(relax.values[j]);
            let dist = f.min(1.0 - f);
            if dist > best_frac {
                best_frac = dist;
                branch_var = Some(j);
            }
        }

        match branch_var {
            None => {
                let mut values = relax.values;
                for j in 0..n {
                    if lp.is_integer(j) {
                        values[j] = round(values[j]);
                    }
                }
                let obj = sign * lp.objective_value(&values);
                if incumbent.as_ref().is_none_or(|(b, _)| obj < *b) {
                    incumbent = Some((obj, values));
                }
            }
            Some(j) => {
                let x = relax.values[j];
                let mut down_upper = node.upper.clone();
                down_upper[j] = floor(x);
                let mut up_lower = node.lower.clone();
                up_lower[j] = ceil(x);
                seq += 1;
                heap.push(Node { bound: value, seq, lower: node.lower, upper: down_upper });
                seq += 1;
                heap.push(Node { bound: value, seq, lower: up_lower, upper: node.upper });
            }
        }
    }

    Ok(match incumbent {
        Some((obj, values)) => Solution {
            status: Status::Optimal,
            objective: sign * obj,
            values,
            duals: Vec::new(),
            nodes,
        },
        None => Solution::without_point(Status::Infeasible, nodes),
    })
}

fn pruned(bound: f64, incumbent: f64, rel_gap: f64) -> bool {
    bound >= incumbent - rel_gap * abs(incumbent).max(1.0)
}
