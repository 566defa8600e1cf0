//! A small exact solver for mixed-integer linear programs.
//!
//! [`solve_lp`] runs a dense two-phase simplex on the continuous relaxation
//! and [`solve_milp`] wraps it in best-first branch-and-bound. Problems can
//! also be written out in CPLEX LP format with [`export_lp_file`] for
//! cross-checking with an external solver.

mod branch;
mod lp_format;
mod simplex;

use alloc::string::String;
use alloc::vec::Vec;

pub use branch::{solve_milp, solve_milp_with, MilpOptions};
pub use lp_format::{export_lp_file, sanitize_name};
pub use simplex::solve_lp;

/// Absolute feasibility tolerance for constraints and bounds.
pub const FEAS_TOL: f64 = 1e-6;
/// Distance from an integer below which a value counts as integral.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("branch-and-bound node limit of {0} exceeded")]
    NodeLimitExceeded(usize),
    #[error("invalid variable name `{0}`")]
    InvalidName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// Index of a variable inside its [`LinearProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violate this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => crate::math::abs(lhs - self.rhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub variables: Vec<Variable>,
    /// Dense objective coefficients, one per variable.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram { sense, variables: Vec::new(), objective: Vec::new(), constraints: Vec::new() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.variables.push(Variable { name: name.into(), lower, upper, kind });
        self.objective.push(0.0);
        VarId(self.variables.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn integer(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Integer)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn set_objective_coef(&mut self, v: VarId, coef: f64) {
        self.objective[v.0] = coef;
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint { name: name.into(), terms, relation, rhs });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn is_integer(&self, v: usize) -> bool {
        !matches!(self.variables[v].kind, VarKind::Continuous)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(values));
        let bounds = self
            .variables
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub(crate) fn validate(&self) -> Result<(), SolverError> {
        if self.objective.len() != self.variables.len() {
            return Err(SolverError::InvalidProblem("objective length mismatch".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(SolverError::InvalidProblem("non-finite objective coefficient".into()));
        }
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(SolverError::InvalidProblem(alloc::format!("bad bounds on `{}`", v.name)));
            }
            if v.kind != VarKind::Continuous && !(v.lower.is_finite() && v.upper.is_finite()) {
                return Err(SolverError::InvalidProblem(alloc::format!("integer variable `{}` needs finite bounds", v.name)));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() || c.terms.iter().any(|&(v, a)| !a.is_finite() || v.0 >= self.variables.len()) {
                return Err(SolverError::InvalidProblem(alloc::format!("bad row `{}`", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    /// Objective value in the problem's own sense (meaningful when optimal).
    pub objective: f64,
    pub values: Vec<f64>,
    /// Sensitivity of the optimal objective to each row's right-hand side.
    /// Filled by [`solve_lp`] only.
    pub duals: Vec<f64>,
    /// Branch-and-bound nodes whose relaxation was solved.
    pub nodes: usize,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub(crate) fn without_point(status: Status, nodes: usize) -> Self {
        Solution { status, objective: 0.0, values: Vec::new(), duals: Vec::new(), nodes }
    }
}
