//! The resource planner.
//!
//! [`allocate`] first tries to serve the estimated demand with the fewest
//! workers using only each task's most accurate variants (hardware scaling).
//! When that is infeasible it maximizes end-to-end accuracy over all variants
//! with the whole cluster (accuracy scaling). Demand beyond what the cluster
//! can serve even at the lowest accuracy yields
//! [`AllocError::TotallyInfeasible`], which carries a best-effort plan that
//! serves as much as fits.
//!
//! Baseline planners live in [`baselines`]; [`audit_plan`] re-checks any plan
//! against the raw profiles.

mod audit;
mod baselines;
mod formulation;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use audit::{audit_plan, PlanAudit};
pub use baselines::{allocate_hardware_only, allocate_pipeline_agnostic};
pub use formulation::{build_milp, Formulation};

use crate::milp::{solve_milp, Relation, Sense, SolverError, Status};
use crate::model::{Pipeline, VertexId};
use formulation::{formulate, Coverage, Settings};

/// Floor for a primary objective frozen before a tie-break solve: a small
/// absolute slack plus a relative one, so tiny served fractions stay tight.
fn lexi_floor(optimum: f64) -> f64 {
    optimum - (1e-9 + 1e-7 * optimum.abs())
}
/// Flow shares below this are reported as zero.
const FLOW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocError {
    #[error("invalid cluster configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid demand estimate: {0}")]
    InvalidDemand(String),
    #[error("demand history is empty")]
    EmptyHistory,
    #[error("smoothing factor {0} is outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("latency budget {budget_ms} ms for {hops}-task paths is not positive")]
    BudgetNonPositive { hops: usize, budget_ms: f64 },
    #[error("demand exceeds cluster capacity; at most {max_feasible_demand} qps can be served")]
    TotallyInfeasible { max_feasible_demand: f64, best_effort: Box<AllocationPlan> },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Cluster-wide constants of the planning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Number of identical workers `S`.
    pub worker_count: u32,
    /// End-to-end latency objective `L` in milliseconds.
    pub slo_ms: f64,
    /// Communication delay per hop in milliseconds.
    #[serde(default)]
    pub comm_latency_ms: f64,
    /// Batch sizes a worker may be configured with, ascending.
    pub allowed_batches: Vec<u32>,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), AllocError> {
        let bad = |m: &str| Err(AllocError::InvalidConfig(m.to_string()));
        if self.worker_count < 1 {
            return bad("worker_count must be at least 1");
        }
        if !(self.slo_ms > 0.0 && self.slo_ms.is_finite()) {
            return bad("slo_ms must be positive");
        }
        if !(self.comm_latency_ms >= 0.0 && self.comm_latency_ms.is_finite()) {
            return bad("comm_latency_ms must be non-negative");
        }
        if self.allowed_batches.is_empty() {
            return bad("allowed_batches is empty");
        }
        if self.allowed_batches.contains(&0) || self.allowed_batches.windows(2).any(|w| w[0] >= w[1]) {
            return bad("allowed_batches must be positive and strictly ascending");
        }
        Ok(())
    }
}

/// Estimated load: root demand and per-vertex multiplicative factors
/// (indexed like [`Pipeline::vertices`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimate {
    pub qps: f64,
    pub mult_factors: Vec<f64>,
}

impl DemandEstimate {
    /// Demand `qps` with the profiled multiplicative factors.
    pub fn profiled(pipeline: &Pipeline, qps: f64) -> Self {
        DemandEstimate { qps, mult_factors: pipeline.mult_factors() }
    }

    fn validate(&self, pipeline: &Pipeline) -> Result<(), AllocError> {
        if !(self.qps >= 0.0 && self.qps.is_finite()) {
            return Err(AllocError::InvalidDemand(format!("qps {} must be finite and non-negative", self.qps)));
        }
        if self.mult_factors.len() != pipeline.vertex_count() {
            return Err(AllocError::InvalidDemand("one multiplicative factor per variant is required".into()));
        }
        if self.mult_factors.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(AllocError::InvalidDemand("multiplicative factors must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    #[serde(rename = "hardware")]
    HardwareScaling,
    #[serde(rename = "accuracy")]
    AccuracyScaling,
}

impl PlanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanMode::HardwareScaling => "hardware",
            PlanMode::AccuracyScaling => "accuracy",
        }
    }
}

/// A resource allocation: what to host, with which batch size, and how the
/// planner expects demand to flow through the variant paths.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub mode: PlanMode,
    /// Demand the plan was computed for.
    pub demand_qps: f64,
    /// Hosted instance counts `x(v)`; only positive counts are stored.
    pub instances: BTreeMap<VertexId, u32>,
    /// Configured batch size `y(v)` of every hosted vertex and of every
    /// vertex on an active path.
    pub max_batch: BTreeMap<VertexId, u32>,
    /// `c(p)`, indexed like [`Pipeline::paths`].
    pub path_flow: Vec<f64>,
    /// `I(p)`, indexed like [`Pipeline::paths`].
    pub path_active: Vec<bool>,
    /// Profiled execution time of a full batch for each entry of `max_batch`.
    pub latency_budget_ms: BTreeMap<VertexId, f64>,
    /// `sum c(p) A(p) / sum c(p)`; zero when nothing is served.
    pub planned_accuracy: f64,
    /// Fraction of root requests the plan serves (below one only for
    /// best-effort plans).
    pub served_fraction: f64,
    /// Branch-and-bound nodes spent on the solves behind this plan.
    pub solver_nodes: usize,
}

impl AllocationPlan {
    pub fn workers_used(&self) -> u32 {
        self.instances.values().sum()
    }

    pub fn instances_of(&self, v: VertexId) -> u32 {
        self.instances.get(&v).copied().unwrap_or(0)
    }

    /// Throughput of one worker hosting `v` at its configured batch size.
    pub fn worker_capacity_qps(&self, pipeline: &Pipeline, v: VertexId) -> f64 {
        self.max_batch.get(&v).and_then(|&b| pipeline.profile(v).throughput_at(b)).unwrap_or(0.0)
    }

    /// Serializable summary using task and variant ids.
    pub fn to_report(&self, pipeline: &Pipeline) -> PlanReport {
        let g = pipeline.graph();
        let variants = self
            .instances
            .iter()
            .map(|(&v, &x)| VariantAllocation {
                task: g.task_id(v.task).to_string(),
                variant: pipeline.profile(v).id.clone(),
                instances: x,
                max_batch: self.max_batch[&v],
                latency_budget_ms: self.latency_budget_ms[&v],
                capacity_qps: x as f64 * self.worker_capacity_qps(pipeline, v),
            })
            .collect();
        let paths = (0..pipeline.paths().len())
            .filter(|&p| self.path_flow[p] > 0.0)
            .map(|p| PathFlow {
                variants: pipeline.path_variant_ids(p),
                flow: self.path_flow[p],
                accuracy: pipeline.path_accuracy(p),
            })
            .collect();
        PlanReport {
            mode: self.mode,
            demand_qps: self.demand_qps,
            workers_used: self.workers_used(),
            planned_accuracy: self.planned_accuracy,
            served_fraction: self.served_fraction,
            variants,
            paths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub mode: PlanMode,
    pub demand_qps: f64,
    pub workers_used: u32,
    pub planned_accuracy: f64,
    pub served_fraction: f64,
    pub variants: Vec<VariantAllocation>,
    pub paths: Vec<PathFlow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantAllocation {
    pub task: String,
    pub variant: String,
    pub instances: u32,
    pub max_batch: u32,
    pub latency_budget_ms: f64,
    pub capacity_qps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFlow {
    pub variants: Vec<String>,
    pub flow: f64,
    pub accuracy: f64,
}

/// Exponentially weighted moving average of per-second counts, newest last.
pub fn estimate_demand(history: &[f64], alpha: f64) -> Result<f64, AllocError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(AllocError::InvalidAlpha(alpha));
    }
    let (first, rest) = history.split_first().ok_or(AllocError::EmptyHistory)?;
    Ok(rest.iter().fold(*first, |e, &h| alpha * h + (1.0 - alpha) * e))
}

/// Processing-time budget of a path with `hops` tasks: communication time is
/// removed from the objective and the remainder halved, leaving the other
/// half for queueing.
pub fn effective_path_budget(cfg: &ClusterConfig, hops: usize) -> Result<f64, AllocError> {
    let budget = path_budget_ms(cfg, hops);
    if budget <= 0.0 {
        return Err(AllocError::BudgetNonPositive { hops, budget_ms: budget });
    }
    Ok(budget)
}

pub(crate) fn path_budget_ms(cfg: &ClusterConfig, hops: usize) -> f64 {
    (cfg.slo_ms - hops as f64 * cfg.comm_latency_ms) / 2.0
}

/// Full-batch execution time of every configured vertex.
pub fn derive_latency_budgets(pipeline: &Pipeline, max_batch: &BTreeMap<VertexId, u32>) -> BTreeMap<VertexId, f64> {
    max_batch
        .iter()
        .filter_map(|(&v, &b)| pipeline.profile(v).batch_latency_ms(b).map(|ms| (v, ms)))
        .collect()
}

/// Two-step allocation: hardware scaling, then accuracy scaling.
pub fn allocate(pipeline: &Pipeline, cfg: &ClusterConfig, demand: &DemandEstimate) -> Result<AllocationPlan, AllocError> {
    check_inputs(pipeline, cfg, demand)?;
    if let Some(plan) = solve_mode(pipeline, cfg, demand, PlanMode::HardwareScaling, None)? {
        return Ok(plan);
    }
    if let Some(plan) = solve_mode(pipeline, cfg, demand, PlanMode::AccuracyScaling, None)? {
        return Ok(plan);
    }
    let best_effort = allocate_best_effort(pipeline, cfg, demand, PlanMode::AccuracyScaling, None)?;
    Err(AllocError::TotallyInfeasible {
        max_feasible_demand: demand.qps * best_effort.served_fraction,
        best_effort: Box::new(best_effort),
    })
}

pub(crate) fn check_inputs(pipeline: &Pipeline, cfg: &ClusterConfig, demand: &DemandEstimate) -> Result<(), AllocError> {
    cfg.validate()?;
    demand.validate(pipeline)
}

/// Solves one step with full coverage; `None` when infeasible.
pub(crate) fn solve_mode(
    pipeline: &Pipeline,
    cfg: &ClusterConfig,
    demand: &DemandEstimate,
    mode: PlanMode,
    budget_override_ms: Option<f64>,
) -> Result<Option<AllocationPlan>, AllocError> {
    let settings = Settings { mode, coverage: Coverage::Exact, budget_override_ms };
    let mut f = formulate(pipeline, cfg, demand, &settings);
    let primary = solve_milp(&f.lp)?;
    if primary.status != Status::Optimal {
        return Ok(None);
    }
    let mut nodes = primary.nodes;
    let solution = match mode {
        PlanMode::HardwareScaling => {
            // Same worker count, largest batches.
            let bound = primary.objective + 0.5;
            f.lp.add_constraint("fix_workers", f.worker_terms.clone(), Relation::Le, bound);
            let terms = f.batch_rank_terms.clone();
            f.set_objective(Sense::Maximize, &terms);
            let second = solve_milp(&f.lp)?;
            nodes += second.nodes;
            if second.is_optimal() {
                second.values
            } else {
                primary.values
            }
        }
        PlanMode::AccuracyScaling => {
            let terms = f.accuracy_terms.clone();
            let (values, extra) = compact(&mut f, &terms, primary.objective, primary.values)?;
            nodes += extra;
            values
        }
    };
    let mut plan = decode(pipeline, demand, &f, mode, &solution, nodes);
    if mode == PlanMode::AccuracyScaling {
        fill_spare_workers(pipeline, cfg, demand, &mut plan);
    }
    Ok(Some(plan))
}

/// Best-effort plan under partial coverage: maximizes the served fraction,
/// then accuracy, then uses as few workers (at batch sizes as large) as
/// possible before spreading the spare workers over the busiest variants.
pub(crate) fn allocate_best_effort(
    pipeline: &Pipeline,
    cfg: &ClusterConfig,
    demand: &DemandEstimate,
    mode: PlanMode,
    budget_override_ms: Option<f64>,
) -> Result<AllocationPlan, AllocError> {
    let settings = Settings { mode, coverage: Coverage::AtMost, budget_override_ms };
    let mut f = formulate(pipeline, cfg, demand, &settings);
    let served_terms = f.served_terms.clone();
    f.set_objective(Sense::Maximize, &served_terms);
    let first = solve_milp(&f.lp)?;
    if first.status != Status::Optimal {
        return Err(SolverError::NumericalFailure("best-effort model has no optimum".into()).into());
    }
    let mut nodes = first.nodes;
    f.lp.add_constraint("fix_served", served_terms, Relation::Ge, lexi_floor(first.objective));
    let accuracy_terms = f.accuracy_terms.clone();
    f.set_objective(Sense::Maximize, &accuracy_terms);
    let second = solve_milp(&f.lp)?;
    nodes += second.nodes;
    let (values, extra) = if second.is_optimal() {
        compact(&mut f, &accuracy_terms, second.objective, second.values)?
    } else {
        (first.values, 0)
    };
    nodes += extra;
    let mut plan = decode(pipeline, demand, &f, mode, &values, nodes);
    // Report the optimum itself rather than the slightly relaxed re-solve.
    plan.served_fraction = first.objective.clamp(0.0, 1.0);
    fill_spare_workers(pipeline, cfg, demand, &mut plan);
    Ok(plan)
}

/// Freezes `terms >= optimum - tol` and re-solves for the fewest workers,
/// breaking remaining ties toward larger batch sizes.
fn compact(
    f: &mut Formulation,
    terms: &[(crate::milp::VarId, f64)],
    optimum: f64,
    fallback: Vec<f64>,
) -> Result<(Vec<f64>, usize), AllocError> {
    f.lp.add_constraint("fix_primary", terms.to_vec(), Relation::Ge, lexi_floor(optimum));
    let weight = f.batch_rank_terms.iter().map(|(_, r)| *r).sum::<f64>() + 1.0;
    let mut objective: Vec<(crate::milp::VarId, f64)> = f.worker_terms.iter().map(|&(v, c)| (v, c * weight)).collect();
    objective.extend(f.batch_rank_terms.iter().map(|&(v, r)| (v, -r)));
    f.set_objective(Sense::Minimize, &objective);
    let s = solve_milp(&f.lp)?;
    if s.is_optimal() {
        Ok((s.values, s.nodes))
    } else {
        Ok((fallback, s.nodes))
    }
}

fn decode(
    pipeline: &Pipeline,
    demand: &DemandEstimate,
    f: &Formulation,
    mode: PlanMode,
    values: &[f64],
    nodes: usize,
) -> AllocationPlan {
    let g = pipeline.graph();
    let paths = pipeline.paths();
    let mut instances = BTreeMap::new();
    let mut selected = BTreeMap::new();
    for (vi, &v) in pipeline.vertices().iter().enumerate() {
        let mut x = 0u32;
        let mut batch = None;
        for (j, &b) in f.batches[vi].iter().enumerate() {
            let w = crate::math::round(values[f.w[vi][j].0]).max(0.0) as u32;
            x += w;
            if w > 0 || values[f.z[vi][j].0] > 0.5 {
                batch = Some(b);
            }
        }
        if x > 0 {
            instances.insert(v, x);
        }
        if let Some(b) = batch {
            selected.insert(v, b);
        }
    }

    let mut path_flow = Vec::with_capacity(paths.len());
    let mut path_active = Vec::with_capacity(paths.len());
    for (pi, p) in paths.iter().enumerate() {
        let share = g.share(p.sink_task());
        let c = values[f.c[pi].0].clamp(0.0, share);
        let active = values[f.active[pi].0] > 0.5;
        path_flow.push(if c < FLOW_EPS || !active { 0.0 } else { c });
        path_active.push(active);
    }
    drop_unhosted_residuals(pipeline, demand, &instances, &mut path_flow);

    let mut max_batch = BTreeMap::new();
    for (&v, &b) in &selected {
        let on_active = pipeline.augmented().paths_through(v).iter().any(|&pi| path_active[pi]);
        if instances.contains_key(&v) || on_active {
            max_batch.insert(v, b);
        }
    }
    let latency_budget_ms = derive_latency_budgets(pipeline, &max_batch);
    let served_fraction = served_fraction(pipeline, &path_flow);
    AllocationPlan {
        mode,
        demand_qps: demand.qps,
        instances,
        max_batch,
        path_flow: path_flow.clone(),
        path_active,
        latency_budget_ms,
        planned_accuracy: planned_accuracy(pipeline, &path_flow),
        served_fraction,
        solver_nodes: nodes,
    }
}

/// Removes solver residue: flow on paths that load a vertex with no
/// instances. Each sink's remaining flows are rescaled to keep its total.
fn drop_unhosted_residuals(
    pipeline: &Pipeline,
    demand: &DemandEstimate,
    instances: &BTreeMap<VertexId, u32>,
    path_flow: &mut [f64],
) {
    let paths = pipeline.paths();
    let mut removed = false;
    let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
    for (pi, p) in paths.iter().enumerate() {
        *totals.entry(p.sink_task()).or_default() += path_flow[pi];
    }
    for (pi, p) in paths.iter().enumerate() {
        if path_flow[pi] == 0.0 {
            continue;
        }
        let starved = p.vertices.iter().any(|&v| {
            !instances.contains_key(&v)
                && demand.qps * pipeline.path_multiplier_with(p, v, &demand.mult_factors).unwrap_or(0.0) > 0.0
        });
        if starved {
            path_flow[pi] = 0.0;
            removed = true;
        }
    }
    if !removed {
        return;
    }
    for (&sink, &total) in &totals {
        let kept: f64 = paths.iter().enumerate().filter(|(_, p)| p.sink_task() == sink).map(|(pi, _)| path_flow[pi]).sum();
        if kept > 0.0 {
            for (pi, p) in paths.iter().enumerate() {
                if p.sink_task() == sink {
                    path_flow[pi] *= total / kept;
                }
            }
        }
    }
}

pub(crate) fn planned_accuracy(pipeline: &Pipeline, path_flow: &[f64]) -> f64 {
    let total: f64 = path_flow.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    path_flow.iter().enumerate().map(|(p, c)| c * pipeline.path_accuracy(p)).sum::<f64>() / total
}

pub(crate) fn served_fraction(pipeline: &Pipeline, path_flow: &[f64]) -> f64 {
    let g = pipeline.graph();
    let sink = g.sinks_below(g.root())[0];
    let served: f64 = pipeline
        .paths()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.sink_task() == sink)
        .map(|(pi, _)| path_flow[pi])
        .sum::<f64>()
        / g.share(sink);
    served.min(1.0)
}

/// Planned arrival rate at every vertex (indexed like the vertices), read
/// off the canonical sink of each task.
pub(crate) fn planned_loads(pipeline: &Pipeline, demand: &DemandEstimate, path_flow: &[f64]) -> Vec<f64> {
    let g = pipeline.graph();
    pipeline
        .vertices()
        .iter()
        .map(|&v| {
            let sink = g.sinks_below(v.task)[0];
            pipeline
                .augmented()
                .paths_through(v)
                .iter()
                .filter(|&&pi| pipeline.paths()[pi].sink_task() == sink)
                .map(|&pi| {
                    let m = pipeline.path_multiplier_with(&pipeline.paths()[pi], v, &demand.mult_factors).unwrap_or(0.0);
                    demand.qps * m * path_flow[pi] / g.share(sink)
                })
                .sum()
        })
        .collect()
}

/// Hands unused workers one at a time to the hosted variant with the highest
/// planned load-to-capacity ratio (lowest vertex first on ties).
pub(crate) fn fill_spare_workers(pipeline: &Pipeline, cfg: &ClusterConfig, demand: &DemandEstimate, plan: &mut AllocationPlan) {
    let loads = planned_loads(pipeline, demand, &plan.path_flow);
    while plan.workers_used() < cfg.worker_count {
        let mut best: Option<(VertexId, f64)> = None;
        for (&v, &x) in &plan.instances {
            let cap = x as f64 * plan.worker_capacity_qps(pipeline, v);
            let ratio = loads[pipeline.vertex_index(v)] / cap;
            if best.is_none_or(|(_, r)| ratio > r) {
                best = Some((v, ratio));
            }
        }
        match best {
            Some((v, _)) => *plan.instances.get_mut(&v).expect("hosted") += 1,
            None => break,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny1;

    fn cfg() -> ClusterConfig {
        ClusterConfig { worker_count: 4, slo_ms: 600.0, comm_latency_ms: 0.0, allowed_batches: alloc::vec![1, 4] }
    }

    #[test]
    fn ewma_examples() {
        assert_eq!(estimate_demand(&[10.0, 10.0, 10.0], 0.3).unwrap(), 10.0);
        assert_eq!(estimate_demand(&[0.0, 100.0], 0.5).unwrap(), 50.0);
        assert_eq!(estimate_demand(&[100.0, 0.0, 0.0, 0.0], 0.5).unwrap(), 12.5);
        assert_eq!(estimate_demand(&[], 0.5), Err(AllocError::EmptyHistory));
        assert!(matches!(estimate_demand(&[1.0], 0.0), Err(AllocError::InvalidAlpha(_))));
    }

    #[test]
    fn budgets() {
        assert_eq!(effective_path_budget(&cfg(), 2).unwrap(), 300.0);
        let c = ClusterConfig { slo_ms: 250.0, comm_latency_ms: 5.0, ..cfg() };
        assert_eq!(effective_path_budget(&c, 2).unwrap(), 120.0);
        let c = ClusterConfig { slo_ms: 20.0, comm_latency_ms: 15.0, ..cfg() };
        assert!(matches!(effective_path_budget(&c, 2), Err(AllocError::BudgetNonPositive { .. })));
    }

    #[test]
    fn latency_budget_examples() {
        let p = tiny1();
        let batches: BTreeMap<VertexId, u32> =
            [(VertexId::new(0, 0), 4), (VertexId::new(1, 0), 4), (VertexId::new(1, 1), 1)].into_iter().collect();
        let b = derive_latency_budgets(&p, &batches);
        assert_eq!(b[&VertexId::new(0, 0)], 200.0);
        assert_eq!(b[&VertexId::new(1, 0)], 100.0);
        assert_eq!(b[&VertexId::new(1, 1)], 10.0);
    }

    #[test]
    fn variable_counts() {
        let p = tiny1();
        let lp = build_milp(&p, &cfg(), &DemandEstimate::profiled(&p, 5.0), PlanMode::AccuracyScaling);
        let count = |prefix: &str| lp.variables.iter().filter(|v| v.name.starts_with(prefix)).count();
        assert_eq!((count("c_"), count("I_"), count("z_"), count("w_")), (4, 4, 8, 8));
        let hw = build_milp(&p, &cfg(), &DemandEstimate::profiled(&p, 5.0), PlanMode::HardwareScaling);
        let free: Vec<&str> =
            hw.variables.iter().filter(|v| v.name.starts_with("z_") && v.upper > 0.0).map(|v| v.name.as_str()).collect();
        assert_eq!(free, ["z_t0_v0_b1", "z_t0_v0_b4", "z_t1_v0_b1", "z_t1_v0_b4"]);
    }

    #[test]
    fn hardware_step_at_low_demand() {
        let p = tiny1();
        let plan = allocate(&p, &cfg(), &DemandEstimate::profiled(&p, 5.0)).unwrap();
        assert_eq!(plan.mode, PlanMode::HardwareScaling);
        assert_eq!(plan.workers_used(), 2);
        assert_eq!(plan.instances_of(VertexId::new(0, 0)), 1);
        assert_eq!(plan.instances_of(VertexId::new(1, 0)), 1);
        assert_eq!(plan.max_batch[&VertexId::new(0, 0)], 4);
        assert_eq!(plan.max_batch[&VertexId::new(1, 0)], 4);
        assert!((plan.planned_accuracy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_step_past_hardware_capacity() {
        let p = tiny1();
        let plan = allocate(&p, &cfg(), &DemandEstimate::profiled(&p, 40.0)).unwrap();
        assert_eq!((plan.mode, plan.workers_used()), (PlanMode::HardwareScaling, 4));
        let plan = allocate(&p, &cfg(), &DemandEstimate::profiled(&p, 41.0)).unwrap();
        assert_eq!(plan.mode, PlanMode::AccuracyScaling);
        assert!((plan.planned_accuracy - (20.0 + 21.0 * 0.78) / 41.0).abs() < 1e-6, "{plan:?}");
        assert_eq!(plan.workers_used(), 4);
    }

    #[test]
    fn beyond_capacity_is_totally_infeasible() {
        let p = tiny1();
        match allocate(&p, &cfg(), &DemandEstimate::profiled(&p, 1e6)) {
            Err(AllocError::TotallyInfeasible { max_feasible_demand, best_effort }) => {
                assert!((max_feasible_demand - 200.0).abs() < 1e-3, "{max_feasible_demand}");
                assert_eq!(best_effort.workers_used(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_demand_takes_best_path() {
        let p = tiny1();
        let plan = allocate(&p, &cfg(), &DemandEstimate::profiled(&p, 0.0)).unwrap();
        assert_eq!(plan.workers_used(), 0);
        assert!((plan.path_flow[0] - 1.0).abs() < 1e-9);
        assert!((plan.planned_accuracy - 1.0).abs() < 1e-9);
    }
}
