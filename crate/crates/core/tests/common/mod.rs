#![allow(dead_code)]

pub mod router_bf;

use pipescale_core::sim::RuntimeParams;
use pipescale_core::workload::ArrivalProcess;
use pipescale_core::{ClusterConfig, DropPolicy, Pipeline, PipelineSpec, PolicyMode, SimConfig};

pub const TINY1_JSON: &str = include_str!("../../../../configs/tiny1.pipeline.json");

pub fn tiny1() -> Pipeline {
    let spec: PipelineSpec = serde_json::from_str(TINY1_JSON).expect("fixture parses");
    Pipeline::from_spec(&spec).expect("fixture is valid")
}

pub fn tiny1_cluster() -> ClusterConfig {
    ClusterConfig { worker_count: 4, slo_ms: 600.0, comm_latency_ms: 0.0, allowed_batches: vec![1, 4] }
}

pub fn sim_config(arrivals: ArrivalProcess, seed: u64, mode: PolicyMode, drop: DropPolicy) -> SimConfig {
    SimConfig {
        pipeline: tiny1(),
        cluster: tiny1_cluster(),
        arrivals,
        seed,
        policy_mode: mode,
        drop_policy: drop,
        runtime: RuntimeParams::default(),
    }
}
