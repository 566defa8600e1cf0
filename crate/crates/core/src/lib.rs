//! Resource provisioning and request-level simulation for multi-model
//! inference pipelines served on a fixed-size cluster.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! the command-line interface and output writers live in the `pipescale`
//! companion crate.
//!
//! Layout:
//!
//! - [`model`]: pipeline trees, variant profiles, the variant-level
//!   augmented graph and its root-to-sink paths.
//! - [`milp`]: dense simplex, branch-and-bound and CPLEX-LP export.
//! - [`allocator`]: the two-step hardware/accuracy scaling planner and the
//!   baseline planners.
//! - [`router`]: accuracy-greedy routing tables and backup tables.
//! - [`sim`]: the deterministic discrete-event simulator and its runtime
//!   dropping/rerouting policies.
//! - [`workload`]: arrival processes.
//! - [`metrics`]: run accounting and summary metrics.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod allocator;
pub mod math;
pub mod metrics;
pub mod milp;
pub mod model;
pub mod router;
pub mod sim;
pub mod workload;

pub use model::{ModelError, Pipeline, PipelineGraph, PipelineSpec, VertexId};
pub use allocator::{AllocError, AllocationPlan, ClusterConfig, DemandEstimate, PlanMode};
pub use router::{BackupTable, RoutingTables, WorkerState};
pub use sim::{DropPolicy, PolicyMode, SimConfig};
pub use workload::ArrivalProcess;
