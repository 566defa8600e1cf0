//! Comparison planners.
//!
//! - [`allocate_hardware_only`] scales hardware with the most accurate
//!   variants and never trades accuracy; past its capacity it plans for as
//!   much as fits on the whole cluster and leaves the rest to be shed.
//! - [`allocate_pipeline_agnostic`] scales accuracy per task in isolation:
//!   workers are split across tasks up front and each task plans its own
//!   variants without knowing what its neighbours choose.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    allocate_best_effort, check_inputs, derive_latency_budgets, path_budget_ms, planned_accuracy, served_fraction,
    solve_mode, AllocError, AllocationPlan, ClusterConfig, DemandEstimate, PlanMode,
};
use crate::math::floor;
use crate::model::{Pipeline, VertexId};

/// Hardware scaling only. Infeasible demand yields the best-effort plan over
/// the most accurate variants using every worker.
pub fn allocate_hardware_only(
    pipeline: &Pipeline,
    cfg: &ClusterConfig,
    demand: &DemandEstimate,
) -> Result<AllocationPlan, AllocError> {
    check_inputs(pipeline, cfg, demand)?;
    if let Some(plan) = solve_mode(pipeline, cfg, demand, PlanMode::HardwareScaling, None)? {
        return Ok(plan);
    }
    allocate_best_effort(pipeline, cfg, demand, PlanMode::HardwareScaling, None)
}

/// Per-task accuracy scaling on a static split of the cluster.
///
/// Each task gets a share of the workers proportional to its arrival rate
/// when every upstream task runs its most accurate variant (at least one
/// worker per task when there are enough), and a latency budget equal to the
/// path budget divided evenly over the tasks. Every task then solves its own
/// accuracy-scaling problem and hands spare workers to its busiest variant.
pub fn allocate_pipeline_agnostic(
    pipeline: &Pipeline,
    cfg: &ClusterConfig,
    demand: &DemandEstimate,
) -> Result<AllocationPlan, AllocError> {
    check_inputs(pipeline, cfg, demand)?;
    let g = pipeline.graph();
    let n = g.task_count();

    // Arrival rate per task assuming top variants upstream.
    let mut rate = vec![0.0; n];
    for t in 0..n {
        rate[t] = match g.parent(t) {
            None => demand.qps,
            Some(parent) => {
                let top = VertexId::new(parent, pipeline.top_variants(parent)[0]);
                rate[parent] * demand.mult_factors[pipeline.vertex_index(top)] * g.branch_ratio(t)
            }
        };
    }
    let shares = split_workers(cfg.worker_count, &rate);

    let mut plan = AllocationPlan {
        mode: PlanMode::AccuracyScaling,
        demand_qps: demand.qps,
        instances: BTreeMap::new(),
        max_batch: BTreeMap::new(),
        path_flow: Vec::new(),
        path_active: Vec::new(),
        latency_budget_ms: BTreeMap::new(),
        planned_accuracy: 0.0,
        served_fraction: 0.0,
        solver_nodes: 0,
    };
    // Fraction of a task's arrivals sent to each of its variants.
    let mut fraction: Vec<Vec<f64>> = (0..n).map(|t| vec![0.0; pipeline.variants(t).len()]).collect();
    for t in 0..n {
        if shares[t] == 0 {
            continue;
        }
        let budget = g
            .sinks_below(t)
            .into_iter()
            .map(|s| path_budget_ms(cfg, g.depth(s)) / g.depth(s) as f64)
            .fold(f64::INFINITY, f64::min);
        let sub = pipeline.isolated_task(t);
        let sub_cfg = ClusterConfig { worker_count: shares[t], ..cfg.clone() };
        let sub_demand = DemandEstimate::profiled(&sub, rate[t]);
        let sub_plan = match solve_mode(&sub, &sub_cfg, &sub_demand, PlanMode::AccuracyScaling, Some(budget))? {
            Some(p) => p,
            None => allocate_best_effort(&sub, &sub_cfg, &sub_demand, PlanMode::AccuracyScaling, Some(budget))?,
        };
        plan.solver_nodes += sub_plan.solver_nodes;
        let lift = |v: VertexId| VertexId::new(t, v.variant);
        plan.instances.extend(sub_plan.instances.iter().map(|(&v, &x)| (lift(v), x)));
        plan.max_batch.extend(sub_plan.max_batch.iter().map(|(&v, &b)| (lift(v), b)));
        fraction[t].copy_from_slice(&sub_plan.path_flow);
    }

    for p in pipeline.paths() {
        let product: f64 = p.vertices.iter().map(|v| fraction[v.task][v.variant]).product();
        let c = g.share(p.sink_task()) * product;
        plan.path_flow.push(c);
        plan.path_active.push(c > 0.0);
    }
    plan.max_batch.retain(|v, _| plan.instances.contains_key(v));
    plan.latency_budget_ms = derive_latency_budgets(pipeline, &plan.max_batch);
    plan.planned_accuracy = planned_accuracy(pipeline, &plan.path_flow);
    plan.served_fraction = served_fraction(pipeline, &plan.path_flow);
    Ok(plan)
}

/// Splits `workers` proportionally to `weights` by largest remainder,
/// guaranteeing one worker per entry when there are enough to go round.
/// Equal weights are used when all weights are zero; ties go to the lower
/// index.
pub(crate) fn split_workers(workers: u32, weights: &[f64]) -> Vec<u32> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = if total > 0.0 { weights.to_vec() } else { vec![1.0; n] };
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| workers as f64 * w / total).collect();
    let mut out: Vec<u32> = exact.iter().map(|&e| floor(e) as u32).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (exact[b] - floor(exact[b])).total_cmp(&(exact[a] - floor(exact[a]))).then(a.cmp(&b)));
    let left = workers - out.iter().sum::<u32>();
    for &i in order.iter().take(left as usize) {
        out[i] += 1;
    }
    if workers as usize >= n {
        while let Some(empty) = out.iter().position(|&x| x == 0) {
            let donor = (0..n).max_by(|&a, &b| out[a].cmp(&out[b]).then(b.cmp(&a))).expect("non-empty");
            out[donor] -= 1;
            out[empty] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny1;

    fn cfg() -> ClusterConfig {
        ClusterConfig { worker_count: 4, slo_ms: 600.0, comm_latency_ms: 0.0, allowed_batches: vec![1, 4] }
    }

    #[test]
    fn worker_split() {
        assert_eq!(split_workers(4, &[5.0, 10.0]), vec![1, 3]);
        assert_eq!(split_workers(4, &[0.0, 0.0]), vec![2, 2]);
        assert_eq!(split_workers(1, &[1.0, 1.0]), vec![1, 0]);
        assert_eq!(split_workers(7, &[1.0, 1.0, 1.0]), vec![3, 2, 2]);
        assert_eq!(split_workers(4, &[100.0, 1.0, 1.0]), vec![2, 1, 1]);
    }

    #[test]
    fn agnostic_uses_whole_cluster_at_low_demand() {
        let p = tiny1();
        let plan = allocate_pipeline_agnostic(&p, &cfg(), &DemandEstimate::profiled(&p, 5.0)).unwrap();
        assert_eq!(plan.workers_used(), 4);
        assert!((plan.planned_accuracy - 1.0).abs() < 1e-9);
        assert!(plan.instances.keys().all(|v| v.variant == 0));
    }

    #[test]
    fn hardware_only_saturates_when_overloaded() {
        let p = tiny1();
        let plan = allocate_hardware_only(&p, &cfg(), &DemandEstimate::profiled(&p, 41.0)).unwrap();
        assert_eq!(plan.workers_used(), 4);
        assert!(plan.instances.keys().all(|v| v.variant == 0));
        assert!((plan.served_fraction - 40.0 / 41.0).abs() < 1e-6);
        let plan = allocate_hardware_only(&p, &cfg(), &DemandEstimate::profiled(&p, 40.0)).unwrap();
        assert_eq!(plan.workers_used(), 4);
        assert!((plan.served_fraction - 1.0).abs() < 1e-9);
    }
}
