//! Routing tables for the frontend and the workers.
//!
//! [`most_accurate_first`] walks the task tree in topological order and, at
//! every task, fills that task's workers in non-increasing order of
//! single-model accuracy until each one saturates. Whatever capacity is left
//! becomes the [`BackupTable`] consulted by opportunistic rerouting.
//!
//! [`proportional_routing`] is the accuracy-agnostic alternative used with the
//! baseline planners: every worker of a task receives a fixed share of the
//! task's traffic.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::allocator::AllocationPlan;
use crate::model::{Pipeline, VertexId};

/// Slack for capacity comparisons, in queries per second.
const QPS_EPS: f64 = 1e-9;

/// One worker as seen by the load balancer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerState {
    pub id: usize,
    pub vertex: VertexId,
    /// Throughput at the configured batch size.
    pub capacity_qps: f64,
    /// Traffic assigned by the last table computation.
    pub incoming_qps: f64,
    /// Execution time of a full batch (the variant's latency budget).
    pub exec_ms: f64,
    /// Single-model accuracy of the hosted variant.
    pub accuracy: f64,
}

/// One worker per hosted instance, in vertex order, numbered from 0.
pub fn workers_from_plan(pipeline: &Pipeline, plan: &AllocationPlan) -> Vec<WorkerState> {
    let mut out = Vec::new();
    for (&v, &x) in &plan.instances {
        let b = plan.max_batch[&v];
        let profile = pipeline.profile(v);
        for _ in 0..x {
            out.push(WorkerState {
                id: out.len(),
                vertex: v,
                capacity_qps: profile.throughput_at(b).unwrap_or(0.0),
                incoming_qps: 0.0,
                exec_ms: profile.batch_latency_ms(b).unwrap_or(0.0),
                accuracy: profile.accuracy,
            });
        }
    }
    out
}

/// Probabilistic next hops.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoutingTables {
    /// `(root-task worker, probability)`; sums to `1 - shed_probability`.
    pub frontend: Vec<(usize, f64)>,
    /// Probability that the frontend drops an arrival for lack of capacity.
    pub shed_probability: f64,
    /// worker -> child task -> `(child worker, probability)`.
    pub workers: BTreeMap<usize, BTreeMap<usize, Vec<(usize, f64)>>>,
}

impl RoutingTables {
    /// Entries for queries leaving `worker` toward `child_task`.
    pub fn next_hops(&self, worker: usize, child_task: usize) -> &[(usize, f64)] {
        self.workers.get(&worker).and_then(|m| m.get(&child_task)).map_or(&[], |v| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackupEntry {
    pub worker: usize,
    pub leftover_qps: f64,
    pub exec_ms: f64,
    pub accuracy: f64,
}

/// Workers with unused capacity, per task, fastest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BackupTable {
    pub tasks: BTreeMap<usize, Vec<BackupEntry>>,
}

impl BackupTable {
    pub fn entries(&self, task: usize) -> &[BackupEntry] {
        self.tasks.get(&task).map_or(&[], |v| v.as_slice())
    }

    pub fn entries_mut(&mut self, task: usize) -> Option<&mut Vec<BackupEntry>> {
        self.tasks.get_mut(&task)
    }

    /// Leftover capacity of `workers` (throughput minus assigned traffic),
    /// per task.
    pub fn from_workers(workers: &[WorkerState], task_count: usize) -> Self {
        let mut tasks = BTreeMap::new();
        for t in 0..task_count {
            let mut entries: Vec<BackupEntry> = workers
                .iter()
                .filter(|w| w.vertex.task == t && w.capacity_qps - w.incoming_qps > QPS_EPS)
                .map(|w| BackupEntry {
                    worker: w.id,
                    leftover_qps: w.capacity_qps - w.incoming_qps,
                    exec_ms: w.exec_ms,
                    accuracy: w.accuracy,
                })
                .collect();
            entries.sort_by(|a, b| a.exec_ms.total_cmp(&b.exec_ms).then(a.worker.cmp(&b.worker)));
            tasks.insert(t, entries);
        }
        BackupTable { tasks }
    }
}

/// Result of one table computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Routing {
    pub tables: RoutingTables,
    pub backup: BackupTable,
    /// Workers with the traffic assigned to them.
    pub workers: Vec<WorkerState>,
    /// Root demand the root task cannot absorb; the frontend sheds it.
    pub unrouted_qps: f64,
    /// Intermediate traffic beyond child capacity. It is still routed,
    /// spread over the child task's workers by capacity.
    pub overflow_qps: f64,
}

impl Routing {
    /// Whether the demand exceeded what the root task can take.
    pub fn demand_exceeds_capacity(&self) -> bool {
        self.unrouted_qps > QPS_EPS
    }

    /// Expected flow share of each variant path (indexed like
    /// [`Pipeline::paths`]) when following the tables from the frontend:
    /// the probability of realizing the path times the sink's share, so the
    /// shares of a sink add up to its branch-ratio product when nothing is
    /// shed.
    pub fn path_fractions(&self, pipeline: &Pipeline) -> Vec<f64> {
        let mut out = vec![0.0; pipeline.paths().len()];
        let vertex_of: BTreeMap<usize, VertexId> = self.workers.iter().map(|w| (w.id, w.vertex)).collect();
        // Probability mass of each worker sequence, explored depth first.
        fn walk(
            r: &Routing,
            pipeline: &Pipeline,
            vertex_of: &BTreeMap<usize, VertexId>,
            worker: usize,
            prefix: &mut Vec<VertexId>,
            mass: f64,
            out: &mut [f64],
        ) {
            let v = vertex_of[&worker];
            prefix.push(v);
            let g = pipeline.graph();
            if g.is_sink(v.task) {
                if let Some(p) = pipeline.augmented().path_index(prefix) {
                    out[p] += mass * g.share(v.task);
                }
            }
            for &child in g.children(v.task) {
                // Each child subtree is a separate set of sink paths sharing
                // the same prefix, so the mass is not split between children.
                for &(next, prob) in r.tables.next_hops(worker, child) {
                    let depth = prefix.len();
                    walk(r, pipeline, vertex_of, next, prefix, mass * prob, out);
                    prefix.truncate(depth);
                }
            }
            prefix.pop();
        }
        let mut prefix = Vec::new();
        for &(w, p) in &self.tables.frontend {
            walk(self, pipeline, &vertex_of, w, &mut prefix, p, &mut out);
        }
        out
    }
}

/// Orders workers by accuracy (descending), then variant declaration order,
/// then worker id.
fn accuracy_order(workers: &[WorkerState], task: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..workers.len()).filter(|&i| workers[i].vertex.task == task).collect();
    idx.sort_by(|&a, &b| {
        let (wa, wb) = (&workers[a], &workers[b]);
        wb.accuracy
            .total_cmp(&wa.accuracy)
            .then(wa.vertex.variant.cmp(&wb.vertex.variant))
            .then(wa.id.cmp(&wb.id))
    });
    idx
}

/// Accuracy-greedy table construction.
///
/// `mult_factors` is indexed like [`Pipeline::vertices`]. Worker `incoming`
/// values in the input are ignored.
pub fn most_accurate_first(
    pipeline: &Pipeline,
    workers: &[WorkerState],
    demand_qps: f64,
    mult_factors: &[f64],
) -> Routing {
    let g = pipeline.graph();
    let mut ws: Vec<WorkerState> = workers.to_vec();
    for w in &mut ws {
        w.incoming_qps = 0.0;
    }
    let mut remaining: Vec<f64> = ws.iter().map(|w| w.capacity_qps).collect();
    let mut tables = RoutingTables::default();

    // Frontend: fill root workers in accuracy order.
    let mut unrouted = demand_qps.max(0.0);
    if demand_qps > 0.0 {
        for i in accuracy_order(&ws, g.root()) {
            if unrouted <= 0.0 {
                break;
            }
            if remaining[i] <= 0.0 {
                continue;
            }
            let routed = unrouted.min(remaining[i]);
            tables.frontend.push((ws[i].id, routed / demand_qps));
            remaining[i] -= routed;
            ws[i].incoming_qps += routed;
            unrouted -= routed;
        }
        if unrouted <= QPS_EPS {
            unrouted = 0.0;
        }
        tables.shed_probability = unrouted / demand_qps;
    }

    let mut overflow = 0.0;
    for t in 0..g.task_count() {
        for i in accuracy_order(&ws, t) {
            let r = mult_factors[pipeline.vertex_index(ws[i].vertex)];
            let mut table = BTreeMap::new();
            for &child in g.children(t) {
                let mut outgoing = ws[i].incoming_qps * r * g.branch_ratio(child);
                let total = outgoing;
                let mut entries: Vec<(usize, f64)> = Vec::new();
                let children = accuracy_order(&ws, child);
                for &j in &children {
                    if remaining[j] > 0.0 && outgoing > 0.0 {
                        let routed = outgoing.min(remaining[j]);
                        entries.push((ws[j].id, routed / total));
                        outgoing -= routed;
                        remaining[j] -= routed;
                        ws[j].incoming_qps += routed;
                    }
                }
                if outgoing > QPS_EPS * total.max(1.0) {
                    overflow += outgoing;
                    let cap: f64 = children.iter().map(|&j| ws[j].capacity_qps).sum();
                    if cap > 0.0 {
                        for &j in &children {
                            let extra = outgoing * ws[j].capacity_qps / cap;
                            ws[j].incoming_qps += extra;
                            match entries.iter_mut().find(|(id, _)| *id == ws[j].id) {
                                Some(e) => e.1 += extra / total,
                                None => entries.push((ws[j].id, extra / total)),
                            }
                        }
                    }
                }
                if !entries.is_empty() {
                    table.insert(child, entries);
                }
            }
            if !table.is_empty() {
                tables.workers.insert(ws[i].id, table);
            }
        }
    }
    let backup = BackupTable::from_workers(&ws, g.task_count());
    Routing { tables, backup, workers: ws, unrouted_qps: unrouted, overflow_qps: overflow }
}

/// Accuracy-agnostic tables: every worker of a task receives the fraction
/// `weight / sum of weights in the task` of the task's traffic, whoever
/// sent it.
///
/// `weights` is indexed like `workers`; a task whose weights are all zero
/// falls back to weighting by capacity. The frontend sheds whatever exceeds
/// the root task's capacity.
pub fn proportional_routing(
    pipeline: &Pipeline,
    workers: &[WorkerState],
    weights: &[f64],
    demand_qps: f64,
    mult_factors: &[f64],
) -> Routing {
    let g = pipeline.graph();
    let mut ws: Vec<WorkerState> = workers.to_vec();
    let mut share = vec![0.0; ws.len()];
    for t in 0..g.task_count() {
        let idx: Vec<usize> = (0..ws.len()).filter(|&i| ws[i].vertex.task == t).collect();
        let total: f64 = idx.iter().map(|&i| weights[i].max(0.0)).sum();
        let cap: f64 = idx.iter().map(|&i| ws[i].capacity_qps).sum();
        for &i in &idx {
            share[i] = if total > 0.0 {
                weights[i].max(0.0) / total
            } else if cap > 0.0 {
                ws[i].capacity_qps / cap
            } else {
                0.0
            };
        }
    }
    let task_tables: Vec<Vec<(usize, f64)>> = (0..g.task_count())
        .map(|task| {
            (0..ws.len()).filter(|&i| ws[i].vertex.task == task && share[i] > 0.0).map(|i| (ws[i].id, share[i])).collect()
        })
        .collect();

    let mut tables = RoutingTables::default();
    let root_cap: f64 = ws.iter().filter(|w| w.vertex.task == g.root()).map(|w| w.capacity_qps).sum();
    let admitted = demand_qps.max(0.0).min(root_cap);
    let unrouted = demand_qps.max(0.0) - admitted;
    if demand_qps > 0.0 && admitted > 0.0 {
        tables.frontend = task_tables[g.root()].clone();
        tables.shed_probability = unrouted / demand_qps;
        let keep = 1.0 - tables.shed_probability;
        for e in &mut tables.frontend {
            e.1 *= keep;
        }
    } else if demand_qps > 0.0 {
        tables.shed_probability = 1.0;
    }

    // Expected traffic per task, then per worker.
    let mut task_in = vec![0.0; g.task_count()];
    task_in[g.root()] = admitted;
    for t in 0..g.task_count() {
        for i in 0..ws.len() {
            if ws[i].vertex.task == t {
                ws[i].incoming_qps = task_in[t] * share[i];
            }
        }
        for &child in g.children(t) {
            let out: f64 = (0..ws.len())
                .filter(|&i| ws[i].vertex.task == t)
                .map(|i| ws[i].incoming_qps * mult_factors[pipeline.vertex_index(ws[i].vertex)] * g.branch_ratio(child))
                .sum();
            task_in[child] += out;
        }
    }
    let mut overflow = 0.0;
    for i in 0..ws.len() {
        let t = ws[i].vertex.task;
        if t != g.root() {
            overflow += (ws[i].incoming_qps - ws[i].capacity_qps).max(0.0);
        }
        let mut table = BTreeMap::new();
        for &child in g.children(t) {
            let entries = task_tables[child].clone();
            if !entries.is_empty() {
                table.insert(child, entries);
            }
        }
        if !table.is_empty() {
            tables.workers.insert(ws[i].id, table);
        }
    }
    let backup = BackupTable::from_workers(&ws, g.task_count());
    Routing { tables, backup, workers: ws, unrouted_qps: unrouted, overflow_qps: overflow }
}

/// Per-worker weights for [`proportional_routing`] derived from a plan: each
/// variant's share of its task's planned flow, split evenly over the
/// variant's instances.
pub fn planned_weights(pipeline: &Pipeline, plan: &AllocationPlan, workers: &[WorkerState]) -> Vec<f64> {
    let g = pipeline.graph();
    let mut marginal = vec![0.0; pipeline.vertex_count()];
    for &v in pipeline.vertices() {
        let sink = g.sinks_below(v.task)[0];
        marginal[pipeline.vertex_index(v)] = pipeline
            .augmented()
            .paths_through(v)
            .iter()
            .filter(|&&p| pipeline.paths()[p].sink_task() == sink)
            .map(|&p| plan.path_flow[p])
            .sum();
    }
    workers
        .iter()
        .map(|w| {
            let x = plan.instances_of(w.vertex).max(1) as f64;
            marginal[pipeline.vertex_index(w.vertex)] / x
        })
        .collect()
}

/// Periodically recomputed tables. `refresh` swaps in a complete new
/// snapshot; readers never observe a partially built one.
#[derive(Debug, Clone)]
pub struct LoadBalancer {
    workers: Vec<WorkerState>,
    weights: Option<Vec<f64>>,
    current: Routing,
}

impl LoadBalancer {
    /// Accuracy-greedy balancer over `workers`.
    pub fn most_accurate_first(pipeline: &Pipeline, workers: Vec<WorkerState>, demand_qps: f64, mult: &[f64]) -> Self {
        let current = most_accurate_first(pipeline, &workers, demand_qps, mult);
        LoadBalancer { workers, weights: None, current }
    }

    /// Fixed-share balancer over `workers`.
    pub fn proportional(
        pipeline: &Pipeline,
        workers: Vec<WorkerState>,
        weights: Vec<f64>,
        demand_qps: f64,
        mult: &[f64],
    ) -> Self {
        let current = proportional_routing(pipeline, &workers, &weights, demand_qps, mult);
        LoadBalancer { workers, weights: Some(weights), current }
    }

    /// Recomputes the tables for a new demand estimate.
    pub fn refresh(&mut self, pipeline: &Pipeline, demand_qps: f64, mult: &[f64]) -> &Routing {
        self.current = match &self.weights {
            None => most_accurate_first(pipeline, &self.workers, demand_qps, mult),
            Some(w) => proportional_routing(pipeline, &self.workers, w, demand_qps, mult),
        };
        &self.current
    }

    pub fn routing(&self) -> &Routing {
        &self.current
    }

    pub fn routing_mut(&mut self) -> &mut Routing {
        &mut self.current
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }
}
