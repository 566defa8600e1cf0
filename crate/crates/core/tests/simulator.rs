mod common;

use common::{sim_config, tiny1};
use pipescale_core::metrics::{Outcome, SimLog};
use pipescale_core::sim::{run, SimRun};
use pipescale_core::workload::{synth, ArrivalProcess, SynthSpec};
use pipescale_core::{DropPolicy, PlanMode, PolicyMode, VertexId};

fn poisson(rate: f64, seconds: f64, seed: u64) -> ArrivalProcess {
    synth(&SynthSpec::Poisson { rate_qps: rate, duration_s: seconds }, seed).unwrap()
}

fn step(levels: &[f64], level_s: f64) -> ArrivalProcess {
    synth(&SynthSpec::Step { levels: levels.to_vec(), level_duration_s: level_s }, 0).unwrap()
}

fn assert_conserved(log: &SimLog) {
    let pipeline = tiny1();
    let graph = pipeline.graph();
    let admitted = log.roots.iter().filter(|r| r.outcome != Outcome::Shed).count() as u64;
    assert_eq!(log.tasks[graph.root()].arrived, admitted, "root task sees every admitted request");
    for (t, c) in log.tasks.iter().enumerate() {
        assert_eq!(c.arrived, c.executed + c.dropped + c.in_flight, "task {t}: {c:?}");
        assert!(c.dropped_after_execution <= c.executed, "task {t}: {c:?}");
        let into_children: u64 = graph.children(t).iter().map(|&ch| log.tasks[ch].arrived).sum();
        if graph.is_sink(t) {
            assert_eq!(c.emitted, 0);
        } else {
            assert_eq!(c.emitted, into_children, "task {t} emits what its children receive");
        }
    }
}

fn assert_batches_valid(log: &SimLog) {
    let mut last_end = vec![f64::NEG_INFINITY; log.worker_count as usize];
    let mut batches = log.batches.clone();
    batches.sort_by(|a, b| (a.worker, a.start_ms).partial_cmp(&(b.worker, b.start_ms)).unwrap());
    for b in &batches {
        assert!(b.size >= 1 && b.size <= b.max_batch, "{b:?}");
        assert!(b.end_ms > b.start_ms);
        assert!(b.start_ms >= last_end[b.worker] - 1e-9, "overlapping batches on worker {}", b.worker);
        last_end[b.worker] = b.end_ms;
    }
    for &busy in &log.worker_busy_ms {
        let u = busy / log.end_ms;
        assert!((0.0..=1.0).contains(&u), "utilization {u}");
    }
}

fn run_ok(arrivals: ArrivalProcess, seed: u64, mode: PolicyMode, drop: DropPolicy) -> SimRun {
    run(&sim_config(arrivals, seed, mode, drop)).unwrap()
}

#[test]
fn outcomes_account_for_every_arrival() {
    for (drop, rate) in [(DropPolicy::None, 60.0), (DropPolicy::PerTask, 180.0), (DropPolicy::OpportunisticRerouting, 260.0)]
    {
        let arrivals = poisson(rate, 30.0, 3);
        let n = arrivals.len() as u64;
        let res = run_ok(arrivals, 3, PolicyMode::PipelineAware, drop);
        let s = &res.result.summary;
        assert_eq!(s.arrivals, n);
        assert_eq!(s.on_time + s.late + s.dropped + s.shed + s.in_flight, n);
        assert_eq!(res.log.roots.len() as u64, n);
        assert_conserved(&res.log);
        assert_batches_valid(&res.log);
    }
}

#[test]
fn conservation_holds_for_every_policy_mode_and_drop_policy() {
    let arrivals = step(&[20.0, 220.0, 20.0], 8.0);
    for mode in PolicyMode::ALL {
        for drop in DropPolicy::ALL {
            let res = run_ok(arrivals.clone(), 11, mode, drop);
            assert_conserved(&res.log);
            assert_batches_valid(&res.log);
        }
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let a = run_ok(poisson(120.0, 20.0, 5), 5, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    let b = run_ok(poisson(120.0, 20.0, 5), 5, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    assert_eq!(a, b);
    let c = run_ok(poisson(120.0, 20.0, 5), 6, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    assert_ne!(a.log, c.log, "the seed drives routing and fanout");
}

#[test]
fn low_demand_is_served_exactly_on_two_workers() {
    let res = run_ok(step(&[5.0], 60.0), 1, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    let s = &res.result.summary;
    assert_eq!(s.arrivals, 300);
    assert_eq!(s.on_time, 300);
    assert_eq!(s.slo_violation_ratio, Some(0.0));
    assert_eq!(s.system_accuracy, Some(1.0));
    assert!(res.log.plans.iter().all(|p| p.workers_used <= 2 && p.mode == PlanMode::HardwareScaling));
}

#[test]
fn stationary_demand_below_capacity_without_swaps_meets_every_deadline() {
    for demand in [5.0, 10.0, 15.0, 20.0] {
        for drop in [DropPolicy::None, DropPolicy::OpportunisticRerouting] {
            for seed in 0..5 {
                let mut cfg = sim_config(step(&[demand], 60.0), seed, PolicyMode::PipelineAware, drop);
                cfg.runtime.swap_delay_ms = 0.0;
                let res = run(&cfg).unwrap();
                assert_eq!(res.result.summary.slo_violation_ratio, Some(0.0), "{demand} qps, {drop:?}, seed {seed}");
            }
        }
    }
}

#[test]
fn hardware_only_collapses_under_heavy_load() {
    let res = run_ok(step(&[200.0], 30.0), 4, PolicyMode::HardwareOnly, DropPolicy::OpportunisticRerouting);
    assert!(res.result.summary.slo_violation_ratio.unwrap() > 0.5);
    let aware = run_ok(step(&[200.0], 30.0), 4, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    assert!(aware.result.summary.slo_violation_ratio.unwrap() < res.result.summary.slo_violation_ratio.unwrap());
}

#[test]
fn per_second_violations_weighted_by_arrivals_match_the_summary() {
    let res = run_ok(step(&[40.0, 230.0, 90.0], 10.0), 8, PolicyMode::PipelineAware, DropPolicy::PerTask);
    let (mut weighted, mut total) = (0.0, 0.0);
    for row in &res.result.series {
        if let Some(v) = row.violation_ratio {
            weighted += v * row.demand_qps;
            total += row.demand_qps;
        }
    }
    let summary = res.result.summary.slo_violation_ratio.unwrap();
    assert!((weighted / total - summary).abs() < 1e-9, "{} vs {summary}", weighted / total);
    assert_eq!(res.result.series.len(), 30);
}

#[test]
fn rerouted_queries_finish_within_the_remaining_slack() {
    let mut rerouted = 0;
    for seed in 0..4 {
        let res = run_ok(poisson(100.0, 30.0, seed), seed, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
        for r in &res.log.reroutes {
            assert!(r.deficit_ms > 0.0);
            assert!(r.chosen_ms <= r.nominal_ms - r.deficit_ms + 1e-9, "{r:?}");
            if let Some(realized) = r.realized_ms {
                assert!(realized <= r.nominal_ms - r.deficit_ms + 1e-9, "{r:?}");
            }
        }
        rerouted += res.log.reroutes.len();
        assert_eq!(res.result.summary.reroutes, res.log.reroutes.len() as u64);
    }
    assert!(rerouted > 0, "mixed-variant load leaves room to reroute");
}

#[test]
fn no_drop_policy_never_beats_rerouting_under_overload() {
    let overload = step(&[30.0, 250.0, 30.0], 20.0);
    for seed in 0..5 {
        let none = run_ok(overload.clone(), seed, PolicyMode::PipelineAware, DropPolicy::None);
        let or = run_ok(overload.clone(), seed, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
        let (n, o) = (none.result.summary.slo_violation_ratio.unwrap(), or.result.summary.slo_violation_ratio.unwrap());
        assert!(n >= o, "seed {seed}: none {n} < rerouting {o}");
    }
}

#[test]
fn heartbeats_converge_to_a_constant_fanout() {
    let pipeline = tiny1();
    let a1 = pipeline.vertex_index(VertexId::new(0, 0));
    let mut truth: Vec<f64> = pipeline.vertices().iter().map(|&v| pipeline.profile(v).mult_factor).collect();
    // a1 is profiled at 2 but emits 3 queries per input.
    truth[a1] = 3.0;
    let mut cfg = sim_config(step(&[6.0], 40.0), 9, PolicyMode::PipelineAware, DropPolicy::None);
    cfg.runtime.true_mult_factors = Some(truth);
    let res = run(&cfg).unwrap();
    let rounds = &res.log.fanout_estimates;
    assert!(rounds.len() >= 20);
    let after_20 = rounds[19][a1];
    assert!((after_20 - 3.0).abs() < 0.03, "a1 estimate after 20 heartbeats {after_20}");
}

#[test]
fn heartbeats_track_a_fractional_fanout_on_average() {
    let pipeline = tiny1();
    let a1 = pipeline.vertex_index(VertexId::new(0, 0));
    let mut truth: Vec<f64> = pipeline.vertices().iter().map(|&v| pipeline.profile(v).mult_factor).collect();
    truth[a1] = 1.5;
    let mut estimates = Vec::new();
    for seed in 0..6 {
        let mut cfg = sim_config(step(&[8.0], 60.0), seed, PolicyMode::PipelineAware, DropPolicy::None);
        cfg.runtime.true_mult_factors = Some(truth.clone());
        let res = run(&cfg).unwrap();
        estimates.extend(res.log.fanout_estimates.iter().skip(15).map(|e| e[a1]));
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean - 1.5).abs() < 0.03, "a1 mean estimate {mean}");
}

#[test]
fn empty_workload_produces_an_empty_series() {
    let res = run_ok(ArrivalProcess::from_counts(&[]), 0, PolicyMode::PipelineAware, DropPolicy::OpportunisticRerouting);
    assert!(res.result.series.is_empty());
    assert_eq!(res.result.summary.arrivals, 0);
    assert_eq!(res.result.summary.slo_violation_ratio, None);
    assert_eq!(res.result.summary.system_accuracy, None);
}
