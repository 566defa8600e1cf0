//! Independent re-check of an allocation plan against the raw profiles.
//!
//! Nothing here reads solver state: loads are propagated hop by hop from the
//! path flows, latencies are recomputed from the profiled throughputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{path_budget_ms, AllocationPlan, ClusterConfig, DemandEstimate, PlanMode};
use crate::model::Pipeline;

const TOL: f64 = 1e-6;

/// Outcome of [`audit_plan`]: one message per violated condition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanAudit {
    pub violations: Vec<String>,
}

impl PlanAudit {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks worker count, batch choices, capacity, path latency, flow
/// activity, sink coverage and (for hardware plans) variant choice.
pub fn audit_plan(pipeline: &Pipeline, cfg: &ClusterConfig, demand: &DemandEstimate, plan: &AllocationPlan) -> PlanAudit {
    let g = pipeline.graph();
    let paths = pipeline.paths();
    let mut out = Vec::new();

    if plan.workers_used() > cfg.worker_count {
        out.push(format!("{} workers used, {} available", plan.workers_used(), cfg.worker_count));
    }
    for (&v, &b) in &plan.max_batch {
        if !cfg.allowed_batches.contains(&b) || pipeline.profile(v).throughput_at(b).is_none() {
            out.push(format!("{} configured with batch {b}", pipeline.vertex_name(v)));
        }
    }
    for &v in plan.instances.keys() {
        if !plan.max_batch.contains_key(&v) {
            out.push(format!("{} hosted without a batch size", pipeline.vertex_name(v)));
        }
    }

    // Arrival rate at each vertex, once per sink below it.
    for &v in pipeline.vertices() {
        let mut loads = Vec::new();
        for s in g.sinks_below(v.task) {
            let mut load = 0.0;
            for (pi, p) in paths.iter().enumerate() {
                if p.sink_task() != s || !p.contains(v) {
                    continue;
                }
                let mut rate = demand.qps * plan.path_flow[pi] / g.share(s);
                for u in &p.vertices {
                    if *u == v {
                        break;
                    }
                    let next = p.vertices[p.position(*u).expect("on path") + 1];
                    rate *= demand.mult_factors[pipeline.vertex_index(*u)] * g.branch_ratio(next.task);
                }
                load += rate;
            }
            loads.push(load);
        }
        let load = loads[0];
        if loads.iter().any(|l| (l - load).abs() > TOL * load.max(1.0)) {
            out.push(format!("sinks disagree on the load of {}: {loads:?}", pipeline.vertex_name(v)));
        }
        let cap = plan.instances_of(v) as f64 * plan.worker_capacity_qps(pipeline, v);
        if load > cap * (1.0 + TOL) + TOL {
            out.push(format!("{} receives {load} qps but serves {cap}", pipeline.vertex_name(v)));
        }
    }

    for (pi, p) in paths.iter().enumerate() {
        let share = g.share(p.sink_task());
        let c = plan.path_flow[pi];
        if !(-TOL..=share + TOL).contains(&c) {
            out.push(format!("flow {c} on path {pi} outside [0, {share}]"));
        }
        if c > TOL && !plan.path_active[pi] {
            out.push(format!("path {pi} carries flow but is inactive"));
        }
        if plan.path_active[pi] {
            let mut latency = 0.0;
            for &v in &p.vertices {
                match plan.max_batch.get(&v).and_then(|&b| pipeline.profile(v).throughput_at(b).map(|q| (b, q))) {
                    Some((b, q)) => latency += 1000.0 * b as f64 / q,
                    None => out.push(format!("active path {pi} crosses unconfigured {}", pipeline.vertex_name(v))),
                }
            }
            let budget = path_budget_ms(cfg, p.hops());
            if latency > budget + TOL {
                out.push(format!("active path {pi} takes {latency} ms against a {budget} ms budget"));
            }
        }
    }

    for s in g.sinks() {
        let covered: f64 = (0..paths.len()).filter(|&pi| paths[pi].sink_task() == s).map(|pi| plan.path_flow[pi]).sum();
        let want = plan.served_fraction * g.share(s);
        if (covered - want).abs() > TOL {
            out.push(format!("sink {} covers {covered}, expected {want}", g.task_id(s)));
        }
    }
    if plan.mode == PlanMode::HardwareScaling {
        for &v in plan.instances.keys() {
            let best = pipeline.variants(v.task).iter().map(|x| x.accuracy).fold(f64::NEG_INFINITY, f64::max);
            if pipeline.profile(v).accuracy < best {
                out.push(format!("hardware plan hosts non-top variant {}", pipeline.vertex_name(v)));
            }
        }
    }
    PlanAudit { violations: out }
}
