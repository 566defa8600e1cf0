//! Runtime policies: early dropping, opportunistic rerouting, fanout
//! sampling and fanout estimation from heartbeats.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::math::{floor, fract};
use crate::router::BackupEntry;

/// What the runtime does with requests that fall behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropPolicy {
    /// Never drop; late requests complete late.
    None,
    /// Drop on entering a final task when the remaining end-to-end budget is
    /// shorter than that task's processing time.
    LastTask,
    /// Drop as soon as a request overruns the budget of any task.
    PerTask,
    /// Like per-task dropping, but first try to make up the lost time on a
    /// faster downstream worker with spare capacity.
    OpportunisticRerouting,
}

impl DropPolicy {
    pub const ALL: [DropPolicy; 4] =
        [DropPolicy::None, DropPolicy::LastTask, DropPolicy::PerTask, DropPolicy::OpportunisticRerouting];

    pub fn as_str(self) -> &'static str {
        match self {
            DropPolicy::None => "none",
            DropPolicy::LastTask => "last-task",
            DropPolicy::PerTask => "per-task",
            DropPolicy::OpportunisticRerouting => "opportunistic-rerouting",
        }
    }
}

/// Where in a request's life the policy is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    /// The request just finished executing at a task.
    AfterExecution,
    /// The request is about to be queued at a final (sink) task.
    EnteringLastTask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropContext {
    pub checkpoint: Checkpoint,
    /// Queueing plus execution time at the task just finished.
    pub time_spent_ms: f64,
    /// Time allowance of that task.
    pub budget_ms: f64,
    /// Time left until the end-to-end deadline.
    pub remaining_ms: f64,
    /// Profiled full-batch execution time of the task being entered.
    pub exec_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropDecision {
    Continue,
    Drop,
    /// Look for a downstream worker that is faster by at least `deficit_ms`.
    TryReroute { deficit_ms: f64 },
}

pub fn apply_drop_policy(policy: DropPolicy, ctx: &DropContext) -> DropDecision {
    let overrun = ctx.time_spent_ms - ctx.budget_ms;
    match (policy, ctx.checkpoint) {
        (DropPolicy::None, _) => DropDecision::Continue,
        (DropPolicy::LastTask, Checkpoint::EnteringLastTask) if ctx.remaining_ms < ctx.exec_ms => DropDecision::Drop,
        (DropPolicy::PerTask, Checkpoint::AfterExecution) if overrun > 0.0 => DropDecision::Drop,
        (DropPolicy::OpportunisticRerouting, Checkpoint::AfterExecution) if overrun > 0.0 => {
            DropDecision::TryReroute { deficit_ms: overrun }
        }
        _ => DropDecision::Continue,
    }
}

/// Leftover capacity below this is treated as none, in queries per second.
const LEFTOVER_EPS: f64 = 1e-9;

/// Picks the most accurate backup worker that can run within
/// `nominal_ms - deficit_ms` and still has leftover capacity; ties are broken
/// uniformly at random. The chosen entry's leftover capacity shrinks by
/// `rate_share_qps`. `None` means the request must be dropped.
pub fn opportunistic_reroute<R: Rng + ?Sized>(
    deficit_ms: f64,
    nominal_ms: f64,
    backup: &mut [BackupEntry],
    rate_share_qps: f64,
    rng: &mut R,
) -> Option<usize> {
    let limit = nominal_ms - deficit_ms;
    let eligible: Vec<usize> =
        (0..backup.len()).filter(|&i| backup[i].leftover_qps > LEFTOVER_EPS && backup[i].exec_ms <= limit).collect();
    let best = eligible.iter().map(|&i| backup[i].accuracy).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = eligible.into_iter().filter(|&i| backup[i].accuracy == best).collect();
    let pick = match ties.len() {
        0 => return None,
        1 => ties[0],
        n => ties[rng.random_range(0..n)],
    };
    let entry = &mut backup[pick];
    entry.leftover_qps = (entry.leftover_qps - rate_share_qps).max(0.0);
    Some(entry.worker)
}

/// How many intermediate queries an executed query emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FanoutMode {
    /// `floor(r)`, plus one with probability `fract(r)`.
    #[default]
    Deterministic,
    /// Poisson with mean `r`.
    Poisson,
}

pub fn sample_fanout<R: Rng + ?Sized>(r: f64, mode: FanoutMode, rng: &mut R) -> u32 {
    if r <= 0.0 {
        return 0;
    }
    match mode {
        FanoutMode::Deterministic => {
            let extra = fract(r);
            let base = floor(r) as u32;
            if extra > 0.0 && rng.random::<f64>() < extra {
                base + 1
            } else {
                base
            }
        }
        FanoutMode::Poisson => Poisson::new(r).expect("positive mean").sample(rng) as u32,
    }
}

/// Controller-side estimate of every variant's multiplicative factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FanoutEstimator {
    pub alpha: f64,
    /// Current estimate per vertex index.
    pub estimates: Vec<f64>,
}

/// One worker's counts since its previous heartbeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FanoutObservation {
    pub vertex_index: usize,
    pub incoming: u64,
    pub outgoing: u64,
}

impl FanoutEstimator {
    pub fn new(initial: Vec<f64>, alpha: f64) -> Self {
        FanoutEstimator { alpha, estimates: initial }
    }

    /// Folds one heartbeat round in: the out/in ratio of each variant,
    /// aggregated over its workers, moves the estimate by EWMA. Variants that
    /// saw no traffic keep their estimate.
    pub fn record_heartbeat(&mut self, observations: &[FanoutObservation]) {
        let n = self.estimates.len();
        let mut incoming = alloc::vec![0u64; n];
        let mut outgoing = alloc::vec![0u64; n];
        for o in observations {
            incoming[o.vertex_index] += o.incoming;
            outgoing[o.vertex_index] += o.outgoing;
        }
        for i in 0..n {
            if incoming[i] > 0 {
                let ratio = outgoing[i] as f64 / incoming[i] as f64;
                self.estimates[i] = self.alpha * ratio + (1.0 - self.alpha) * self.estimates[i];
            }
        }
    }
}
