//! Deterministic discrete-event simulation of a serving cluster.
//!
//! The simulated system has a frontend that admits root requests and routes
//! them by table probabilities, workers that queue and batch queries
//! work-conservingly, and a controller that re-plans the cluster
//! periodically (or when demand drifts), refreshes routing tables every
//! second and folds worker heartbeats into its fanout estimates. The runtime
//! drop policy decides what happens to queries that fall behind.
//!
//! A run is single-threaded over one event queue ordered by time and then
//! by scheduling order, and all randomness comes from per-purpose streams of
//! one seeded generator, so identical configurations give identical logs.

mod engine;
mod policy;

pub use engine::{initial_routing, plan_for, run};
pub use policy::{
    apply_drop_policy, opportunistic_reroute, sample_fanout, Checkpoint, DropContext, DropDecision, DropPolicy,
    FanoutEstimator, FanoutMode, FanoutObservation,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::allocator::ClusterConfig;
use crate::metrics::{SimLog, SimResult};
use crate::model::Pipeline;
use crate::workload::ArrivalProcess;

/// Which planner and router the controller uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Two-step hardware/accuracy planning with accuracy-greedy routing.
    #[serde(alias = "loki")]
    PipelineAware,
    /// Hardware scaling with the most accurate variants only.
    HardwareOnly,
    /// Accuracy scaling planned per task in isolation.
    PipelineAgnostic,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 3] = [PolicyMode::PipelineAware, PolicyMode::HardwareOnly, PolicyMode::PipelineAgnostic];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyMode::PipelineAware => "pipeline-aware",
            PolicyMode::HardwareOnly => "hardware-only",
            PolicyMode::PipelineAgnostic => "pipeline-agnostic",
        }
    }
}

/// Controller and runtime knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeParams {
    /// Periodic re-planning interval.
    pub controller_period_ms: f64,
    /// Routing-table refresh (and demand-drift check) interval.
    pub router_period_ms: f64,
    pub heartbeat_period_ms: f64,
    /// Time a worker is unavailable after its hosted variant changes.
    pub swap_delay_ms: f64,
    /// Smoothing factor of the demand and fanout estimates.
    pub ewma_alpha: f64,
    /// Relative demand drift that triggers an early re-plan.
    pub realloc_threshold: f64,
    pub fanout: FanoutMode,
    /// Fraction of each worker's profiled throughput the controller plans
    /// and routes for. Tables that fill workers to exactly their throughput
    /// leave queues with no slack under random arrivals.
    pub utilization_target: f64,
    /// A task's drop budget as a multiple of its full-batch execution time.
    /// The planner reserves as much time for queueing as for processing, so
    /// the default is 2.
    pub task_budget_factor: f64,
    /// Actual fanout per vertex index; defaults to the profiled factors.
    pub true_mult_factors: Option<Vec<f64>>,
    /// How long to keep processing after the last arrival window; defaults
    /// to the SLO.
    pub drain_ms: Option<f64>,
}

impl Default for RuntimeParams {
    fn default() -> Self {
        RuntimeParams {
            controller_period_ms: 10_000.0,
            router_period_ms: 1_000.0,
            heartbeat_period_ms: 1_000.0,
            swap_delay_ms: 500.0,
            ewma_alpha: 0.3,
            realloc_threshold: 0.2,
            fanout: FanoutMode::Deterministic,
            utilization_target: 0.7,
            task_budget_factor: 2.0,
            true_mult_factors: None,
            drain_ms: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub pipeline: Pipeline,
    pub cluster: ClusterConfig,
    pub arrivals: ArrivalProcess,
    pub seed: u64,
    pub policy_mode: PolicyMode,
    pub drop_policy: DropPolicy,
    pub runtime: RuntimeParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// The raw log of a run and the metrics computed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub log: SimLog,
    pub result: SimResult,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        self.cluster.validate().map_err(|e| SimError::Config(format!("{e}")))?;
        let rt = &self.runtime;
        for (name, v) in [
            ("controller_period_ms", rt.controller_period_ms),
            ("router_period_ms", rt.router_period_ms),
            ("heartbeat_period_ms", rt.heartbeat_period_ms),
            ("task_budget_factor", rt.task_budget_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("swap_delay_ms", rt.swap_delay_ms),
            ("realloc_threshold", rt.realloc_threshold),
            ("drain_ms", rt.drain_ms.unwrap_or(0.0)),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        if !(rt.utilization_target > 0.0 && rt.utilization_target <= 1.0) {
            return bad(format!("utilization_target {} is outside (0, 1]", rt.utilization_target));
        }
        if !(rt.ewma_alpha > 0.0 && rt.ewma_alpha <= 1.0) {
            return bad(format!("ewma_alpha {} is outside (0, 1]", rt.ewma_alpha));
        }
        if let Some(r) = &rt.true_mult_factors {
            if r.len() != self.pipeline.vertex_count() {
                return bad(format!("true_mult_factors has {} entries, expected {}", r.len(), self.pipeline.vertex_count()));
            }
            if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad("true_mult_factors must be finite and nonnegative".into());
            }
        }
        let a = &self.arrivals;
        if !(a.horizon_ms.is_finite() && a.horizon_ms >= 0.0) {
            return bad("arrival horizon must be nonnegative".into());
        }
        if a.arrivals_ms.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t < a.horizon_ms))
            || a.arrivals_ms.windows(2).any(|w| w[0] > w[1])
        {
            return bad("arrivals must be sorted and lie within the horizon".into());
        }
        Ok(())
    }
}
