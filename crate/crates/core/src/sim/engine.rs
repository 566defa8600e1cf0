//! The event loop.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::{
    apply_drop_policy, opportunistic_reroute, sample_fanout, Checkpoint, DropContext, DropDecision, DropPolicy,
    FanoutEstimator, FanoutObservation,
};
use super::{PolicyMode, SimConfig, SimError, SimRun};
use crate::allocator::{
    allocate, allocate_hardware_only, allocate_pipeline_agnostic, AllocError, AllocationPlan, ClusterConfig,
    DemandEstimate,
};
use crate::math::floor;
use crate::metrics::{finalize, BatchRecord, Outcome, PlanRecord, RerouteRecord, RootRecord, SimLog, TaskCounters};
use crate::model::{Pipeline, VertexId};
use crate::router::{planned_weights, BackupTable, LoadBalancer, Routing, WorkerState};

/// Random streams; each purpose draws from its own so that changing one
/// component does not perturb the others.
const STREAM_ROUTING: u64 = 1;
const STREAM_FANOUT: u64 = 2;
const STREAM_TIES: u64 = 3;

/// Slack when comparing completion times against deadlines.
const TIME_EPS: f64 = 1e-9;

/// An intermediate query (or a root request on its way to the root task).
#[derive(Debug, Clone)]
struct Query {
    root: usize,
    task: usize,
    /// Variants visited so far, including the current one once queued.
    path: Vec<VertexId>,
    /// Arrival at the current worker.
    arrived_ms: f64,
    /// Index into the reroute log when this query was rerouted here.
    reroute: Option<usize>,
}

#[derive(Debug)]
enum EventKind {
    Arrival,
    Deliver { worker: usize, query: Query },
    BatchDone { worker: usize, batch: Vec<Query>, vertex: VertexId, max_batch: u32, start_ms: f64 },
    WorkerReady { worker: usize },
    Heartbeat,
    RouterTick,
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct Slot {
    /// Hosted variant and configured batch size.
    assigned: Option<(VertexId, u32)>,
    queue: VecDeque<Query>,
    /// Start and end of the executing batch.
    busy: Option<(f64, f64)>,
    /// Earliest time the hosted model is loaded.
    ready_at: f64,
    busy_ms: f64,
    /// Fanout counts since the last heartbeat, per vertex index.
    observed: BTreeMap<usize, (u64, u64)>,
}

#[derive(Debug)]
struct RootState {
    arrival_ms: f64,
    outstanding: u32,
    accuracy_sum: f64,
    sink_completions: u32,
    dropped: bool,
    outcome: Option<Outcome>,
    finish_ms: Option<f64>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    pipeline: &'a Pipeline,
    now: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    slots: Vec<Slot>,
    balancer: Option<LoadBalancer>,
    planned_demand: Option<f64>,
    roots: Vec<RootState>,
    log: SimLog,
    routing_rng: ChaCha8Rng,
    fanout_rng: ChaCha8Rng,
    tie_rng: ChaCha8Rng,
    estimator: FanoutEstimator,
    true_factors: Vec<f64>,
    per_second: Vec<u64>,
    seconds_folded: usize,
    demand_estimate: f64,
    next_arrival: usize,
    next_replan_ms: f64,
    path_index: BTreeMap<Vec<VertexId>, usize>,
}

/// Runs one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg);
    engine.start();
    engine.process();
    let log = engine.finish();
    let result = finalize(&log);
    Ok(SimRun { log, result })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Execution time of a batch of `size` queries: the throughput of the
/// smallest profiled batch size that fits it.
fn batch_exec_ms(pipeline: &Pipeline, v: VertexId, size: u32) -> f64 {
    let profile = pipeline.profile(v);
    let q = profile
        .throughput
        .iter()
        .filter(|&&(b, _)| b >= size)
        .min_by_key(|&&(b, _)| b)
        .or_else(|| profile.throughput.iter().max_by_key(|&&(b, _)| b))
        .map_or(f64::INFINITY, |&(_, q)| q);
    1000.0 * size as f64 / q
}

fn full_batch_ms(pipeline: &Pipeline, v: VertexId, max_batch: u32) -> f64 {
    pipeline.profile(v).batch_latency_ms(max_batch).unwrap_or_else(|| batch_exec_ms(pipeline, v, max_batch))
}

/// Plans with the planner of `mode`; demand beyond the cluster's capacity
/// yields the best-effort plan.
pub fn plan_for(
    mode: PolicyMode,
    pipeline: &Pipeline,
    cluster: &ClusterConfig,
    demand: &DemandEstimate,
) -> Result<AllocationPlan, AllocError> {
    let result = match mode {
        PolicyMode::PipelineAware => allocate(pipeline, cluster, demand),
        PolicyMode::HardwareOnly => allocate_hardware_only(pipeline, cluster, demand),
        PolicyMode::PipelineAgnostic => allocate_pipeline_agnostic(pipeline, cluster, demand),
    };
    match result {
        Err(AllocError::TotallyInfeasible { best_effort, .. }) => Ok(*best_effort),
        other => other,
    }
}

/// Router view of hosted `(worker id, vertex, batch size)` triples, with
/// capacities scaled by the utilization target.
fn worker_states(pipeline: &Pipeline, hosted: &[(usize, VertexId, u32)], utilization: f64) -> Vec<WorkerState> {
    hosted
        .iter()
        .map(|&(id, v, b)| {
            let profile = pipeline.profile(v);
            WorkerState {
                id,
                vertex: v,
                capacity_qps: profile.throughput_at(b).unwrap_or(0.0) * utilization,
                incoming_qps: 0.0,
                exec_ms: full_batch_ms(pipeline, v, b),
                accuracy: profile.accuracy,
            }
        })
        .collect()
}

/// Tables route up to the utilization target only; the headroom above it is
/// real spare capacity, so backup entries count leftover against the full
/// profiled throughput.
fn widen_backup(pipeline: &Pipeline, routing: &mut Routing, utilization: f64) {
    let full: Vec<WorkerState> = routing
        .workers
        .iter()
        .map(|w| WorkerState { capacity_qps: w.capacity_qps / utilization, ..w.clone() })
        .collect();
    routing.backup = BackupTable::from_workers(&full, pipeline.graph().task_count());
}

fn balancer_for(
    mode: PolicyMode,
    pipeline: &Pipeline,
    plan: &AllocationPlan,
    workers: Vec<WorkerState>,
    demand_qps: f64,
    mult: &[f64],
) -> LoadBalancer {
    match mode {
        PolicyMode::PipelineAware => LoadBalancer::most_accurate_first(pipeline, workers, demand_qps, mult),
        PolicyMode::HardwareOnly | PolicyMode::PipelineAgnostic => {
            let weights = planned_weights(pipeline, plan, &workers);
            LoadBalancer::proportional(pipeline, workers, weights, demand_qps, mult)
        }
    }
}

/// The plan and routing tables a run starts with: planned from the first
/// second's arrivals, one worker per instance numbered in vertex order.
pub fn initial_routing(cfg: &SimConfig) -> Result<(AllocationPlan, Routing), SimError> {
    cfg.validate()?;
    let counts = cfg.arrivals.aggregate_counts();
    let d = counts.first().copied().unwrap_or(0) as f64;
    let r = cfg.pipeline.mult_factors();
    let demand = DemandEstimate { qps: d / cfg.runtime.utilization_target, mult_factors: r.clone() };
    let plan = plan_for(cfg.policy_mode, &cfg.pipeline, &cfg.cluster, &demand)
        .map_err(|e| SimError::Config(alloc::format!("{e}")))?;
    let mut hosted = Vec::new();
    for (&v, &x) in &plan.instances {
        for _ in 0..x {
            hosted.push((hosted.len(), v, plan.max_batch[&v]));
        }
    }
    let workers = worker_states(&cfg.pipeline, &hosted, cfg.runtime.utilization_target);
    let balancer = balancer_for(cfg.policy_mode, &cfg.pipeline, &plan, workers, d, &r);
    let mut routing = balancer.routing().clone();
    widen_backup(&cfg.pipeline, &mut routing, cfg.runtime.utilization_target);
    Ok((plan, routing))
}

/// Chooses an index by weight with one uniform draw; `None` when every
/// weight is zero.
fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < w {
            return Some(i);
        }
        u -= w;
    }
    last
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let pipeline = &cfg.pipeline;
        let task_count = pipeline.graph().task_count();
        let path_index =
            pipeline.paths().iter().enumerate().map(|(i, p)| (p.vertices.clone(), i)).collect::<BTreeMap<_, _>>();
        let per_second = cfg.arrivals.aggregate_counts();
        Engine {
            cfg,
            pipeline,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            slots: (0..cfg.cluster.worker_count).map(|_| Slot::default()).collect(),
            balancer: None,
            planned_demand: None,
            roots: Vec::with_capacity(cfg.arrivals.len()),
            log: SimLog {
                horizon_ms: cfg.arrivals.horizon_ms,
                end_ms: cfg.arrivals.horizon_ms + cfg.runtime.drain_ms.unwrap_or(cfg.cluster.slo_ms),
                worker_count: cfg.cluster.worker_count,
                tasks: vec![TaskCounters::default(); task_count],
                ..SimLog::default()
            },
            routing_rng: stream(cfg.seed, STREAM_ROUTING),
            fanout_rng: stream(cfg.seed, STREAM_FANOUT),
            tie_rng: stream(cfg.seed, STREAM_TIES),
            estimator: FanoutEstimator::new(pipeline.mult_factors(), cfg.runtime.ewma_alpha),
            true_factors: cfg.runtime.true_mult_factors.clone().unwrap_or_else(|| pipeline.mult_factors()),
            demand_estimate: per_second.first().copied().unwrap_or(0) as f64,
            per_second,
            seconds_folded: 1,
            next_arrival: 0,
            next_replan_ms: cfg.runtime.controller_period_ms,
            path_index,
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event { time, seq: self.seq, kind });
    }

    fn start(&mut self) {
        // The first plan uses the first second's arrival count and takes
        // effect immediately.
        self.replan(true);
        let rt = &self.cfg.runtime;
        let horizon = self.cfg.arrivals.horizon_ms;
        if rt.heartbeat_period_ms < horizon {
            self.schedule(rt.heartbeat_period_ms, EventKind::Heartbeat);
        }
        if rt.router_period_ms < horizon {
            self.schedule(rt.router_period_ms, EventKind::RouterTick);
        }
        if let Some(&t) = self.cfg.arrivals.arrivals_ms.first() {
            self.schedule(t, EventKind::Arrival);
        }
    }

    fn process(&mut self) {
        while let Some(top) = self.events.peek() {
            if top.time > self.log.end_ms {
                break;
            }
            let event = self.events.pop().expect("peeked");
            self.now = event.time;
            match event.kind {
                EventKind::Arrival => self.on_arrival(),
                EventKind::Deliver { worker, query } => self.on_deliver(worker, query),
                EventKind::BatchDone { worker, batch, vertex, max_batch, start_ms } => {
                    self.on_batch_done(worker, batch, vertex, max_batch, start_ms)
                }
                EventKind::WorkerReady { worker } => self.try_start(worker),
                EventKind::Heartbeat => self.on_heartbeat(),
                EventKind::RouterTick => self.on_router_tick(),
            }
        }
    }

    // -- controller ---------------------------------------------------------

    fn on_router_tick(&mut self) {
        let rt = &self.cfg.runtime;
        let completed = (floor(self.now / 1000.0) as usize).min(self.per_second.len());
        while self.seconds_folded < completed {
            let h = self.per_second[self.seconds_folded] as f64;
            self.demand_estimate = rt.ewma_alpha * h + (1.0 - rt.ewma_alpha) * self.demand_estimate;
            self.seconds_folded += 1;
        }
        let drifted = match self.planned_demand {
            Some(d) if d > 0.0 => (self.demand_estimate - d).abs() > rt.realloc_threshold * d,
            _ => self.demand_estimate > 0.0,
        };
        if self.now >= self.next_replan_ms - TIME_EPS {
            self.next_replan_ms += rt.controller_period_ms;
            self.replan(false);
        } else if drifted {
            self.replan(false);
        }
        let (d, r) = (self.demand_estimate, self.estimator.estimates.clone());
        if let Some(b) = &mut self.balancer {
            b.refresh(self.pipeline, d, &r);
        }
        self.widen_backup();
        let next = self.now + rt.router_period_ms;
        if next < self.cfg.arrivals.horizon_ms {
            self.schedule(next, EventKind::RouterTick);
        }
    }

    fn on_heartbeat(&mut self) {
        let mut observations = Vec::new();
        for slot in &mut self.slots {
            for (&vertex_index, &(incoming, outgoing)) in &slot.observed {
                observations.push(FanoutObservation { vertex_index, incoming, outgoing });
            }
            slot.observed.clear();
        }
        self.estimator.record_heartbeat(&observations);
        self.log.fanout_estimates.push(self.estimator.estimates.clone());
        let next = self.now + self.cfg.runtime.heartbeat_period_ms;
        if next < self.cfg.arrivals.horizon_ms {
            self.schedule(next, EventKind::Heartbeat);
        }
    }

    fn replan(&mut self, initial: bool) {
        let demand = DemandEstimate {
            qps: self.demand_estimate / self.cfg.runtime.utilization_target,
            mult_factors: self.estimator.estimates.clone() };
        let result = plan_for(self.cfg.policy_mode, self.pipeline, &self.cfg.cluster, &demand);
        let plan = match result {
            Ok(plan) => plan,
            // Keep serving with the previous plan; an empty cluster if there
            // is none yet.
            Err(_) if !initial => return,
            Err(_) => AllocationPlan {
                mode: crate::allocator::PlanMode::HardwareScaling,
                demand_qps: demand.qps,
                instances: BTreeMap::new(),
                max_batch: BTreeMap::new(),
                path_flow: vec![0.0; self.pipeline.paths().len()],
                path_active: vec![false; self.pipeline.paths().len()],
                latency_budget_ms: BTreeMap::new(),
                planned_accuracy: 0.0,
                served_fraction: 0.0,
                solver_nodes: 0,
            },
        };
        self.apply_plan(&plan, initial);
    }

    /// Maps plan instances onto worker slots, keeping slots that already
    /// host a needed variant, then loading the rest onto free slots in id
    /// order.
    fn assign_slots(&self, plan: &AllocationPlan) -> Vec<Option<(VertexId, u32)>> {
        let mut need: BTreeMap<VertexId, u32> = plan.instances.clone();
        let mut out: Vec<Option<(VertexId, u32)>> = vec![None; self.slots.len()];
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some((v, _)) = slot.assigned {
                if let Some(n) = need.get_mut(&v).filter(|n| **n > 0) {
                    *n -= 1;
                    out[i] = Some((v, plan.max_batch[&v]));
                }
            }
        }
        // Idle slots first, then slots whose variant is no longer needed.
        let mut free: Vec<usize> = (0..self.slots.len()).filter(|&i| out[i].is_none()).collect();
        free.sort_by_key(|&i| (self.slots[i].assigned.is_some(), i));
        let mut free = free.into_iter();
        for (&v, &n) in &need {
            for _ in 0..n {
                let i = free.next().expect("plans never exceed the cluster size");
                out[i] = Some((v, plan.max_batch[&v]));
            }
        }
        out
    }

    fn apply_plan(&mut self, plan: &AllocationPlan, initial: bool) {
        let assignment = self.assign_slots(plan);
        let mut orphans = Vec::new();
        for (i, new) in assignment.into_iter().enumerate() {
            let slot = &mut self.slots[i];
            let old_vertex = slot.assigned.map(|(v, _)| v);
            let new_vertex = new.map(|(v, _)| v);
            if old_vertex != new_vertex {
                orphans.extend(slot.queue.drain(..));
                if new.is_some() && !initial {
                    let free_at = slot.busy.map_or(self.now, |(_, end)| end).max(self.now);
                    slot.ready_at = free_at + self.cfg.runtime.swap_delay_ms;
                    let ready_at = slot.ready_at;
                    self.schedule(ready_at, EventKind::WorkerReady { worker: i });
                }
            }
            self.slots[i].assigned = new;
        }

        let hosted: Vec<(usize, VertexId, u32)> =
            self.slots.iter().enumerate().filter_map(|(i, s)| s.assigned.map(|(v, b)| (i, v, b))).collect();
        let workers = worker_states(self.pipeline, &hosted, self.cfg.runtime.utilization_target);
        let d = self.demand_estimate;
        let r = self.estimator.estimates.clone();
        self.balancer = Some(balancer_for(self.cfg.policy_mode, self.pipeline, plan, workers, d, &r));
        self.widen_backup();
        self.planned_demand = Some(d);
        self.log.plans.push(PlanRecord {
            time_ms: self.now,
            mode: plan.mode,
            workers_used: plan.workers_used(),
            demand_qps: d,
            planned_accuracy: plan.planned_accuracy,
            served_fraction: plan.served_fraction,
        });

        for mut q in orphans {
            q.path.pop();
            q.reroute = None;
            match self.worker_within_task(q.task) {
                Some(w) => self.schedule(self.now + self.cfg.cluster.comm_latency_ms, EventKind::Deliver { worker: w, query: q }),
                None => {
                    self.log.tasks[q.task].dropped += 1;
                    self.drop_branch(q.root);
                }
            }
        }
        for i in 0..self.slots.len() {
            self.try_start(i);
        }
    }

    // -- routing ------------------------------------------------------------

    /// Any worker of `task`, weighted by the traffic the tables assign it
    /// (by capacity when they assign none).
    fn worker_within_task(&mut self, task: usize) -> Option<usize> {
        let balancer = self.balancer.as_ref()?;
        let ws: Vec<&WorkerState> = balancer.routing().workers.iter().filter(|w| w.vertex.task == task).collect();
        let incoming: Vec<f64> = ws.iter().map(|w| w.incoming_qps.max(0.0)).collect();
        let capacity: Vec<f64> = ws.iter().map(|w| w.capacity_qps).collect();
        let pick = pick_weighted(&mut self.routing_rng, &incoming).or_else(|| pick_weighted(&mut self.routing_rng, &capacity));
        pick.map(|i| ws[i].id)
    }

    /// A worker for a query the tables have no entry for: the most accurate
    /// worker with spare capacity, else any worker of the task.
    fn fallback_worker(&mut self, task: usize) -> Option<usize> {
        let balancer = self.balancer.as_ref()?;
        let best = balancer
            .routing()
            .backup
            .entries(task)
            .iter()
            .filter(|e| e.leftover_qps > 0.0)
            .min_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then(a.worker.cmp(&b.worker)))
            .map(|e| e.worker);
        best.or_else(|| self.worker_within_task(task))
    }

    fn next_hop(&mut self, from: usize, child: usize) -> Option<usize> {
        let hops: Vec<(usize, f64)> = self.balancer.as_ref()?.routing().tables.next_hops(from, child).to_vec();
        let weights: Vec<f64> = hops.iter().map(|h| h.1).collect();
        match pick_weighted(&mut self.routing_rng, &weights) {
            Some(i) => Some(hops[i].0),
            None => self.fallback_worker(child),
        }
    }

    // -- request lifecycle --------------------------------------------------

    fn on_arrival(&mut self) {
        let idx = self.next_arrival;
        self.next_arrival += 1;
        if let Some(&t) = self.cfg.arrivals.arrivals_ms.get(self.next_arrival) {
            self.schedule(t, EventKind::Arrival);
        }
        self.roots.push(RootState {
            arrival_ms: self.now,
            outstanding: 1,
            accuracy_sum: 0.0,
            sink_completions: 0,
            dropped: false,
            outcome: None,
            finish_ms: None,
        });
        let root_task = self.pipeline.graph().root();
        let (frontend, shed) = match &self.balancer {
            Some(b) => (b.routing().tables.frontend.clone(), b.routing().tables.shed_probability),
            None => (Vec::new(), 1.0),
        };
        let u: f64 = self.routing_rng.random();
        let target = if u < shed {
            None
        } else {
            let weights: Vec<f64> = frontend.iter().map(|e| e.1).collect();
            match pick_weighted(&mut self.routing_rng, &weights) {
                Some(i) => Some(frontend[i].0),
                None => self.fallback_worker(root_task),
            }
        };
        match target {
            None => {
                let root = &mut self.roots[idx];
                root.outstanding = 0;
                root.outcome = Some(Outcome::Shed);
            }
            Some(w) => {
                self.log.tasks[root_task].arrived += 1;
                let query = Query { root: idx, task: root_task, path: Vec::new(), arrived_ms: 0.0, reroute: None };
                self.schedule(self.now + self.cfg.cluster.comm_latency_ms, EventKind::Deliver { worker: w, query });
            }
        }
    }

    fn on_deliver(&mut self, worker: usize, mut query: Query) {
        let assigned = self.slots[worker].assigned.filter(|(v, _)| v.task == query.task);
        let Some((vertex, max_batch)) = assigned else {
            // The worker changed task while the query was in transit.
            query.reroute = None;
            match self.worker_within_task(query.task) {
                Some(w) if self.slots[w].assigned.is_some_and(|(v, _)| v.task == query.task) => {
                    self.on_deliver(w, query)
                }
                _ => {
                    self.log.tasks[query.task].dropped += 1;
                    self.drop_branch(query.root);
                }
            }
            return;
        };
        if self.pipeline.graph().is_sink(query.task) && self.cfg.drop_policy == DropPolicy::LastTask {
            let deadline = self.roots[query.root].arrival_ms + self.cfg.cluster.slo_ms;
            let ctx = DropContext {
                checkpoint: Checkpoint::EnteringLastTask,
                time_spent_ms: 0.0,
                budget_ms: 0.0,
                remaining_ms: deadline - self.now,
                exec_ms: full_batch_ms(self.pipeline, vertex, max_batch),
            };
            if apply_drop_policy(self.cfg.drop_policy, &ctx) == DropDecision::Drop {
                self.log.tasks[query.task].dropped += 1;
                self.drop_branch(query.root);
                return;
            }
        }
        query.path.push(vertex);
        query.arrived_ms = self.now;
        self.slots[worker].queue.push_back(query);
        self.try_start(worker);
    }

    fn try_start(&mut self, worker: usize) {
        let slot = &mut self.slots[worker];
        let Some((vertex, max_batch)) = slot.assigned else { return };
        if slot.busy.is_some() || self.now < slot.ready_at || slot.queue.is_empty() {
            return;
        }
        let size = (slot.queue.len() as u32).min(max_batch);
        let batch: Vec<Query> = slot.queue.drain(..size as usize).collect();
        let exec = batch_exec_ms(self.pipeline, vertex, size);
        let end = self.now + exec;
        slot.busy = Some((self.now, end));
        let start_ms = self.now;
        self.schedule(end, EventKind::BatchDone { worker, batch, vertex, max_batch, start_ms });
    }

    fn on_batch_done(&mut self, worker: usize, batch: Vec<Query>, vertex: VertexId, max_batch: u32, start_ms: f64) {
        let exec = self.now - start_ms;
        {
            let slot = &mut self.slots[worker];
            slot.busy = None;
            slot.busy_ms += exec;
        }
        self.log.batches.push(BatchRecord {
            worker,
            vertex,
            start_ms,
            end_ms: self.now,
            size: batch.len() as u32,
            max_batch,
        });
        let g = self.pipeline.graph();
        let task = vertex.task;
        let vi = self.pipeline.vertex_index(vertex);
        let budget = self.cfg.runtime.task_budget_factor * full_batch_ms(self.pipeline, vertex, max_batch);
        let delta = self.cfg.cluster.comm_latency_ms;
        let rate_share = 1000.0 / self.cfg.runtime.router_period_ms;

        for q in batch {
            self.log.tasks[task].executed += 1;
            if let Some(r) = q.reroute {
                self.log.reroutes[r].realized_ms = Some(exec);
            }
            self.slots[worker].observed.entry(vi).or_default().0 += 1;
            let deadline = self.roots[q.root].arrival_ms + self.cfg.cluster.slo_ms;
            let ctx = DropContext {
                checkpoint: Checkpoint::AfterExecution,
                time_spent_ms: self.now - q.arrived_ms,
                budget_ms: budget,
                remaining_ms: deadline - self.now,
                exec_ms: 0.0,
            };
            let decision = apply_drop_policy(self.cfg.drop_policy, &ctx);
            if decision == DropDecision::Drop {
                self.log.tasks[task].dropped_after_execution += 1;
                self.drop_branch(q.root);
                continue;
            }
            if g.is_sink(task) {
                let accuracy = self.path_index.get(&q.path).map_or(0.0, |&p| self.pipeline.path_accuracy(p));
                let root = &mut self.roots[q.root];
                root.accuracy_sum += accuracy;
                root.sink_completions += 1;
                self.finish_branch(q.root);
                continue;
            }
            let n = sample_fanout(self.true_factors[vi], self.cfg.runtime.fanout, &mut self.fanout_rng);
            self.slots[worker].observed.entry(vi).or_default().1 += n as u64;
            for &child in g.children(task) {
                let ratio = g.branch_ratio(child);
                for _ in 0..n {
                    if ratio < 1.0 && self.fanout_rng.random::<f64>() >= ratio {
                        continue;
                    }
                    self.log.tasks[task].emitted += 1;
                    self.log.tasks[child].arrived += 1;
                    self.roots[q.root].outstanding += 1;
                    let mut next =
                        Query { root: q.root, task: child, path: q.path.clone(), arrived_ms: 0.0, reroute: None };
                    let nominal = self.next_hop(worker, child);
                    let target = match (decision, nominal) {
                        (DropDecision::TryReroute { deficit_ms }, Some(nominal)) => {
                            let nominal_ms = self.slots[nominal]
                                .assigned
                                .map_or(0.0, |(v, b)| full_batch_ms(self.pipeline, v, b));
                            self.reroute(deficit_ms, nominal_ms, child, rate_share).inspect(|&(_, log_idx)| {
                                next.reroute = Some(log_idx);
                            })
                            .map(|(w, _)| w)
                        }
                        (DropDecision::TryReroute { .. }, None) => None,
                        (_, nominal) => nominal,
                    };
                    match target {
                        Some(w) => self.schedule(self.now + delta, EventKind::Deliver { worker: w, query: next }),
                        None => {
                            self.log.tasks[child].dropped += 1;
                            self.drop_branch(q.root);
                        }
                    }
                }
            }
            self.finish_branch(q.root);
        }
        self.try_start(worker);
    }

    fn widen_backup(&mut self) {
        if let Some(balancer) = self.balancer.as_mut() {
            widen_backup(self.pipeline, balancer.routing_mut(), self.cfg.runtime.utilization_target);
        }
    }

    /// Opportunistic rerouting of one child query; returns the chosen worker
    /// and the index of its reroute record.
    fn reroute(&mut self, deficit_ms: f64, nominal_ms: f64, child: usize, rate_share: f64) -> Option<(usize, usize)> {
        let balancer = self.balancer.as_mut()?;
        let entries = balancer.routing_mut().backup.entries_mut(child)?;
        let chosen = opportunistic_reroute(deficit_ms, nominal_ms, entries, rate_share, &mut self.tie_rng)?;
        let chosen_ms = entries.iter().find(|e| e.worker == chosen).map_or(0.0, |e| e.exec_ms);
        self.log.reroutes.push(RerouteRecord {
            time_ms: self.now,
            deficit_ms,
            nominal_ms,
            worker: chosen,
            chosen_ms,
            realized_ms: None,
        });
        Some((chosen, self.log.reroutes.len() - 1))
    }

    fn drop_branch(&mut self, root: usize) {
        self.roots[root].dropped = true;
        self.finish_branch(root);
    }

    /// One outstanding query of `root` is resolved.
    fn finish_branch(&mut self, root: usize) {
        let deadline_slack = self.cfg.cluster.slo_ms + TIME_EPS;
        let r = &mut self.roots[root];
        r.outstanding -= 1;
        if r.outstanding > 0 {
            return;
        }
        r.finish_ms = Some(self.now);
        r.outcome = Some(if r.dropped {
            Outcome::Dropped
        } else if self.now - r.arrival_ms > deadline_slack {
            Outcome::Late
        } else {
            Outcome::OnTime
        });
    }

    fn finish(mut self) -> SimLog {
        let end = self.log.end_ms;
        for event in self.events.drain() {
            match event.kind {
                EventKind::Deliver { query, .. } => self.log.tasks[query.task].in_flight += 1,
                EventKind::BatchDone { batch, vertex, worker, start_ms, .. } => {
                    self.log.tasks[vertex.task].in_flight += batch.len() as u64;
                    self.slots[worker].busy_ms += (end - start_ms).max(0.0);
                }
                _ => {}
            }
        }
        for slot in &self.slots {
            for q in &slot.queue {
                self.log.tasks[q.task].in_flight += 1;
            }
        }
        self.log.worker_busy_ms = self.slots.iter().map(|s| s.busy_ms).collect();
        self.log.roots = self
            .roots
            .iter()
            .map(|r| {
                let outcome = r.outcome.unwrap_or(if r.dropped { Outcome::Dropped } else { Outcome::InFlight });
                let accuracy = (outcome.is_completed() && r.sink_completions > 0)
                    .then(|| r.accuracy_sum / r.sink_completions as f64);
                RootRecord { arrival_ms: r.arrival_ms, finish_ms: r.finish_ms, outcome, accuracy }
            })
            .collect();
        self.log
    }
}
