//! Dense two-phase primal simplex.
//!
//! Every variable is shifted to a non-negative column (free variables are
//! split), finite upper bounds become explicit rows, and rows are flipped so
//! that right-hand sides are non-negative. Phase one minimizes the sum of
//! artificial variables; phase two optimizes the real objective. Pricing is
//! Dantzig's rule, falling back to Bland's rule after a run of degenerate
//! pivots so the method cannot cycle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{LinearProgram, Relation, Sense, Solution, SolverError, Status, FEAS_TOL};
use crate::math::abs;

const PIVOT_TOL: f64 = 1e-10;
const ZERO_TOL: f64 = 1e-13;
const COST_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 200_000;

/// Solves the continuous relaxation of `lp`.
pub fn solve_lp(lp: &LinearProgram) -> Result<Solution, SolverError> {
    lp.validate()?;
    let lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();
    solve_relaxation(lp, &lower, &upper)
}

/// How an original variable is expressed through tableau columns:
/// `x = offset + sign * col (- col2)`.
#[derive(Debug, Clone, Copy)]
struct Mapping {
    offset: f64,
    sign: f64,
    col: usize,
    neg_col: Option<usize>,
}

struct Row {
    coefs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
    /// Index of the originating constraint, `None` for bound rows.
    origin: Option<usize>,
}

/// Solves the relaxation of `lp` with the given bounds in place of the
/// variables' own.
pub(crate) fn solve_relaxation(lp: &LinearProgram, lower: &[f64], upper: &[f64]) -> Result<Solution, SolverError> {
    let n = lp.num_vars();
    for j in 0..n {
        if lower[j] > upper[j] + FEAS_TOL {
            return Ok(Solution::without_point(Status::Infeasible, 0));
        }
    }

    // Column mapping.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut rows: Vec<Row> = Vec::new();
    for j in 0..n {
        let (l, u) = (lower[j], upper[j].max(lower[j]));
        let m = if l.is_finite() {
            let col = ncols;
            ncols += 1;
            if u.is_finite() {
                rows.push(Row { coefs: vec![(col, 1.0)], relation: Relation::Le, rhs: u - l, origin: None });
            }
            Mapping { offset: l, sign: 1.0, col, neg_col: None }
        } else if u.is_finite() {
            let col = ncols;
            ncols += 1;
            Mapping { offset: u, sign: -1.0, col, neg_col: None }
        } else {
            let col = ncols;
            ncols += 2;
            Mapping { offset: 0.0, sign: 1.0, col, neg_col: Some(col + 1) }
        };
        maps.push(m);
    }
    let nstruct = ncols;

    for (ci, c) in lp.constraints.iter().enumerate() {
        let mut rhs = c.rhs;
        let mut coefs: Vec<(usize, f64)> = Vec::with_capacity(c.terms.len());
        for &(v, a) in &c.terms {
            let m = maps[v.0];
            rhs -= a * m.offset;
            coefs.push((m.col, a * m.sign));
            if let Some(nc) = m.neg_col {
                coefs.push((nc, -a));
            }
        }
        rows.push(Row { coefs, relation: c.relation, rhs, origin: Some(ci) });
    }

    // Internal problem is always a minimization.
    let obj_sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; nstruct];
    for j in 0..n {
        let c = obj_sign * lp.objective[j];
        let m = maps[j];
        cost[m.col] += c * m.sign;
        if let Some(nc) = m.neg_col {
            cost[nc] -= c;
        }
    }

    let mut t = Tableau::build(&rows, nstruct);
    let status = t.run_phase_one()?;
    if !status {
        return Ok(Solution::without_point(Status::Infeasible, 0));
    }
    if !t.run_phase_two(&cost)? {
        return Ok(Solution::without_point(Status::Unbounded, 0));
    }

    let cols = t.column_values();
    let mut values: Vec<f64> = maps
        .iter()
        .map(|m| {
            let mut x = m.offset + m.sign * cols[m.col];
            if let Some(nc) = m.neg_col {
                x -= cols[nc];
            }
            x
        })
        .collect();
    // Snap values that drifted past a bound by roundoff.
    for j in 0..n {
        if values[j] < lower[j] && values[j] > lower[j] - FEAS_TOL {
            values[j] = lower[j];
        }
        if values[j] > upper[j] && values[j] < upper[j] + FEAS_TOL {
            values[j] = upper[j];
        }
    }

    let mut duals = vec![0.0; lp.constraints.len()];
    for (i, row) in rows.iter().enumerate() {
        if let Some(ci) = row.origin {
            let y = -t.reduced_cost(t.identity_col[i]);
            duals[ci] = obj_sign * t.row_flip[i] * t.row_scale[i] * y;
        }
    }

    let objective = lp.objective_value(&values);
    // Row violations are judged relative to the magnitude of the row's terms.
    let mut violation: f64 = 0.0;
    for c in &lp.constraints {
        let scale = c.terms.iter().map(|&(v, a)| abs(a * values[v.0])).fold(abs(c.rhs), f64::max).max(1.0);
        violation = violation.max(c.violation(&values) / scale);
    }
    for j in 0..n {
        violation = violation.max((lower[j] - values[j]).max(values[j] - upper[j]));
    }
    if violation > FEAS_TOL {
        return Err(SolverError::NumericalFailure(format!("solution violates a row by {violation:e}")));
    }
    Ok(Solution { status: Status::Optimal, objective, values, duals, nodes: 0 })
}

struct Tableau {
    m: usize,
    /// Total columns excluding the right-hand side.
    width: usize,
    nstruct: usize,
    /// Row-major `m x (width + 1)`; the last entry of each row is the rhs.
    a: Vec<f64>,
    /// Reduced costs (`width` entries) followed by minus the objective value.
    d: Vec<f64>,
    basis: Vec<usize>,
    artificial_start: usize,
    /// Column that held the identity entry of each row at the start.
    identity_col: Vec<usize>,
    /// `-1.0` where a row was negated to make its rhs non-negative.
    row_flip: Vec<f64>,
    /// Factor each row was multiplied by so its largest coefficient is one.
    row_scale: Vec<f64>,
}

impl Tableau {
    fn build(rows: &[Row], nstruct: usize) -> Tableau {
        let m = rows.len();
        let scales: Vec<f64> = rows
            .iter()
            .map(|r| {
                let big = r.coefs.iter().map(|&(_, a)| abs(a)).fold(0.0, f64::max);
                if big > 0.0 {
                    1.0 / big
                } else {
                    1.0
                }
            })
            .collect();
        let mut flips = Vec::with_capacity(m);
        let mut relations = Vec::with_capacity(m);
        for r in rows {
            if r.rhs < 0.0 {
                flips.push(-1.0);
                relations.push(match r.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                });
            } else {
                flips.push(1.0);
                relations.push(r.relation);
            }
        }
        let nslack = relations.iter().filter(|r| **r != Relation::Eq).count();
        let nart = relations.iter().filter(|r| **r != Relation::Le).count();
        let artificial_start = nstruct + nslack;
        let width = artificial_start + nart;
        let stride = width + 1;
        let mut a = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut identity_col = vec![0; m];
        let (mut s, mut art) = (nstruct, artificial_start);
        for (i, r) in rows.iter().enumerate() {
            let f = flips[i] * scales[i];
            let row = &mut a[i * stride..(i + 1) * stride];
            for &(c, v) in &r.coefs {
                row[c] += f * v;
            }
            row[width] = f * r.rhs;
            match relations[i] {
                Relation::Le => {
                    row[s] = 1.0;
                    basis[i] = s;
                    identity_col[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    identity_col[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    identity_col[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            m,
            width,
            nstruct,
            a,
            d: vec![0.0; width + 1],
            basis,
            artificial_start,
            identity_col,
            row_flip: flips,
            row_scale: scales,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.width + 1) + j]
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        self.d[j]
    }

    /// Resets `d` to `cost - c_B B^-1 A` for a cost vector over all columns.
    fn price(&mut self, cost: &[f64]) {
        let stride = self.width + 1;
        self.d.iter_mut().for_each(|x| *x = 0.0);
        self.d[..cost.len()].copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                let row = &self.a[i * stride..(i + 1) * stride];
                for (dj, &aij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let stride = self.width + 1;
        let p = self.a[r * stride + c];
        {
            let row = &mut self.a[r * stride..(r + 1) * stride];
            for x in row.iter_mut() {
                *x /= p;
            }
            row[c] = 1.0;
        }
        let pivot_row: Vec<f64> = self.a[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * stride + c];
            if f != 0.0 {
                let row = &mut self.a[i * stride..(i + 1) * stride];
                for (x, &pr) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        let f = self.d[c];
        if f != 0.0 {
            for (x, &pr) in self.d.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Iterates to optimality over columns `< allowed`. Returns `false` when
    /// the objective is unbounded below.
    fn iterate(&mut self, allowed: usize) -> Result<bool, SolverError> {
        let mut degenerate = 0usize;
        for _ in 0..MAX_PIVOTS {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..allowed).find(|&j| self.d[j] < -COST_TOL)
            } else {
                let mut best = None;
                let mut best_d = -COST_TOL;
                for j in 0..allowed {
                    if self.d[j] < best_d {
                        best_d = self.d[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else {
                return Ok(true);
            };

            let mut leave: Option<(usize, f64, f64)> = None;
            let mut tiny = false;
            for i in 0..self.m {
                let aic = self.at(i, c);
                if aic <= ZERO_TOL {
                    continue;
                }
                if aic <= PIVOT_TOL {
                    tiny = true;
                    continue;
                }
                let ratio = self.at(i, self.width).max(0.0) / aic;
                leave = match leave {
                    None => Some((i, ratio, aic)),
                    Some((bi, br, ba)) => {
                        let tie = abs(ratio - br) <= 1e-12 * (1.0 + br);
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[bi]
                            } else {
                                aic > ba || (aic == ba && self.basis[i] < self.basis[bi])
                            }
                        } else {
                            ratio < br
                        };
                        if better {
                            Some((i, ratio, aic))
                        } else {
                            Some((bi, br, ba))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else {
                if tiny {
                    return Err(SolverError::NumericalFailure(format!(
                        "pivot magnitude below {PIVOT_TOL:e} in column {c}"
                    )));
                }
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
        Err(SolverError::NumericalFailure(format!("no convergence after {MAX_PIVOTS} pivots")))
    }

    /// Returns `false` if the rows are infeasible.
    fn run_phase_one(&mut self) -> Result<bool, SolverError> {
        if self.artificial_start == self.width {
            return Ok(true);
        }
        let mut cost = vec![0.0; self.width];
        for c in cost.iter_mut().skip(self.artificial_start) {
            *c = 1.0;
        }
        self.price(&cost);
        let ok = self.iterate(self.width)?;
        debug_assert!(ok, "phase one is bounded below by zero");
        let infeasibility = -self.d[self.width];
        let scale = 1.0 + (0..self.m).map(|i| abs(self.at(i, self.width))).fold(0.0, f64::max);
        if infeasibility > PHASE1_TOL * scale {
            return Ok(false);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..self.m {
            if self.basis[i] < self.artificial_start {
                continue;
            }
            let col = (0..self.artificial_start)
                .filter(|&j| abs(self.at(i, j)) > 1e-9)
                .max_by(|&x, &y| abs(self.at(i, x)).total_cmp(&abs(self.at(i, y))).then(y.cmp(&x)));
            if let Some(j) = col {
                self.pivot(i, j);
            }
        }
        Ok(true)
    }

    fn run_phase_two(&mut self, cost: &[f64]) -> Result<bool, SolverError> {
        self.price(cost);
        self.iterate(self.artificial_start)
    }

    fn column_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nstruct];
        for i in 0..self.m {
            if self.basis[i] < self.nstruct {
                x[self.basis[i]] = self.at(i, self.width);
            }
        }
        x
    }
}
