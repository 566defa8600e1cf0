//! Run accounting and evaluation metrics.
//!
//! The simulator records a [`SimLog`]; [`finalize`] turns it into a
//! [`SimResult`]: a per-second series bucketed by root-request arrival time
//! plus summary figures.
//!
//! - System accuracy: mean accuracy over completed root requests.
//! - Cluster utilization: workers hosting a model in the current plan, over
//!   the cluster size, averaged over time.
//! - SLO violation ratio: late, dropped, shed and unfinished root requests
//!   over all arrivals. A root request with any dropped branch counts once.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::allocator::PlanMode;
use crate::math::ceil;
use crate::model::VertexId;

/// Final state of a root request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    OnTime,
    Late,
    /// Some branch was dropped by the runtime.
    Dropped,
    /// Rejected by the frontend for lack of capacity.
    Shed,
    /// Still being processed when the run ended.
    InFlight,
}

impl Outcome {
    pub fn is_violation(self) -> bool {
        self != Outcome::OnTime
    }

    pub fn is_completed(self) -> bool {
        matches!(self, Outcome::OnTime | Outcome::Late)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootRecord {
    pub arrival_ms: f64,
    pub finish_ms: Option<f64>,
    pub outcome: Outcome,
    /// Mean path accuracy over the request's sink completions, when there
    /// were any and the request completed.
    pub accuracy: Option<f64>,
}

/// An allocation taking effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub time_ms: f64,
    pub mode: PlanMode,
    pub workers_used: u32,
    pub demand_qps: f64,
    pub planned_accuracy: f64,
    pub served_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub worker: usize,
    pub vertex: VertexId,
    pub start_ms: f64,
    pub end_ms: f64,
    pub size: u32,
    pub max_batch: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerouteRecord {
    pub time_ms: f64,
    pub deficit_ms: f64,
    /// Profiled time of the worker the tables would have chosen.
    pub nominal_ms: f64,
    pub worker: usize,
    /// Profiled full-batch time of the chosen worker.
    pub chosen_ms: f64,
    /// Execution time of the batch the request actually ran in.
    pub realized_ms: Option<f64>,
}

/// Intermediate-query accounting for one task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounters {
    /// Queries addressed to the task (root requests admitted by the frontend
    /// for the root task).
    pub arrived: u64,
    pub executed: u64,
    /// Dropped before executing at this task.
    pub dropped: u64,
    /// Queued, executing or in transit when the run ended.
    pub in_flight: u64,
    /// Executed here, then dropped instead of being forwarded.
    pub dropped_after_execution: u64,
    /// Queries this task emitted towards its children.
    pub emitted: u64,
}

/// Everything a run records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub horizon_ms: f64,
    /// When the run stopped (horizon plus drain time).
    pub end_ms: f64,
    pub worker_count: u32,
    pub roots: Vec<RootRecord>,
    pub plans: Vec<PlanRecord>,
    pub batches: Vec<BatchRecord>,
    pub reroutes: Vec<RerouteRecord>,
    pub tasks: Vec<TaskCounters>,
    pub worker_busy_ms: Vec<f64>,
    /// Fanout estimates per vertex index after each heartbeat round.
    pub fanout_estimates: Vec<Vec<f64>>,
}

/// One second of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondRow {
    pub second: u64,
    /// Root arrivals in this second.
    pub demand_qps: f64,
    /// Of those, the ones that completed (on time or late).
    pub served_qps: f64,
    pub violation_ratio: Option<f64>,
    pub accuracy: Option<f64>,
    pub utilization: f64,
    /// Plan mode in effect at the start of the second.
    pub mode: Option<PlanMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub time_ms: f64,
    pub from: PlanMode,
    pub to: PlanMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub arrivals: u64,
    pub on_time: u64,
    pub late: u64,
    pub dropped: u64,
    pub shed: u64,
    pub in_flight: u64,
    pub system_accuracy: Option<f64>,
    pub cluster_utilization: Option<f64>,
    pub mean_active_workers: Option<f64>,
    pub slo_violation_ratio: Option<f64>,
    pub max_accuracy_drop: Option<f64>,
    pub phase_transitions: Vec<PhaseTransition>,
    pub reroutes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub series: Vec<SecondRow>,
    pub summary: Summary,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Workers in use, as a step function of time, averaged over `[from, to)`.
fn mean_workers(plans: &[PlanRecord], from: f64, to: f64) -> f64 {
    if to <= from {
        return 0.0;
    }
    let mut area = 0.0;
    for (i, p) in plans.iter().enumerate() {
        let start = p.time_ms.max(from);
        let end = plans.get(i + 1).map_or(to, |n| n.time_ms).min(to);
        if end > start {
            area += (end - start) * p.workers_used as f64;
        }
    }
    area / (to - from)
}

pub fn finalize(log: &SimLog) -> SimResult {
    let seconds = ceil(log.horizon_ms / 1000.0) as usize;
    let mut arrivals = vec![0u64; seconds];
    let mut served = vec![0u64; seconds];
    let mut violated = vec![0u64; seconds];
    let mut acc_sum = vec![0.0; seconds];
    let mut acc_n = vec![0u64; seconds];
    let mut counts = [0u64; 5];
    for r in &log.roots {
        counts[r.outcome as usize] += 1;
        let s = ((r.arrival_ms / 1000.0) as usize).min(seconds.saturating_sub(1));
        if seconds == 0 {
            continue;
        }
        arrivals[s] += 1;
        if r.outcome.is_completed() {
            served[s] += 1;
        }
        if r.outcome.is_violation() {
            violated[s] += 1;
        }
        if let (true, Some(a)) = (r.outcome.is_completed(), r.accuracy) {
            acc_sum[s] += a;
            acc_n[s] += 1;
        }
    }

    let workers = log.worker_count.max(1) as f64;
    let series: Vec<SecondRow> = (0..seconds)
        .map(|s| {
            let start = s as f64 * 1000.0;
            let end = (start + 1000.0).min(log.horizon_ms);
            let mode = log.plans.iter().take_while(|p| p.time_ms <= start).last().map(|p| p.mode);
            SecondRow {
                second: s as u64,
                demand_qps: arrivals[s] as f64,
                served_qps: served[s] as f64,
                violation_ratio: (arrivals[s] > 0).then(|| violated[s] as f64 / arrivals[s] as f64),
                accuracy: (acc_n[s] > 0).then(|| acc_sum[s] / acc_n[s] as f64),
                utilization: mean_workers(&log.plans, start, end) / workers,
                mode,
            }
        })
        .collect();

    let total = log.roots.len() as u64;
    let accuracies = || log.roots.iter().filter(|r| r.outcome.is_completed()).filter_map(|r| r.accuracy);
    let per_second: Vec<f64> = series.iter().filter_map(|r| r.accuracy).collect();
    let max_accuracy_drop = per_second.iter().copied().reduce(f64::max).map(|hi| {
        let lo = per_second.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    });
    let phase_transitions = log
        .plans
        .windows(2)
        .filter(|w| w[0].mode != w[1].mode)
        .map(|w| PhaseTransition { time_ms: w[1].time_ms, from: w[0].mode, to: w[1].mode })
        .collect();
    let active = (log.horizon_ms > 0.0).then(|| mean_workers(&log.plans, 0.0, log.horizon_ms));
    let summary = Summary {
        arrivals: total,
        on_time: counts[Outcome::OnTime as usize],
        late: counts[Outcome::Late as usize],
        dropped: counts[Outcome::Dropped as usize],
        shed: counts[Outcome::Shed as usize],
        in_flight: counts[Outcome::InFlight as usize],
        system_accuracy: mean(accuracies()),
        cluster_utilization: active.map(|a| a / workers),
        mean_active_workers: active,
        slo_violation_ratio: (total > 0).then(|| (total - counts[Outcome::OnTime as usize]) as f64 / total as f64),
        max_accuracy_drop,
        phase_transitions,
        reroutes: log.reroutes.len() as u64,
    };
    SimResult { series, summary }
}
