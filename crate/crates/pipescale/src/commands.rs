//! Subcommand implementations. Each writes its human-readable report to
//! `out` and its files to disk.

use std::io::Write;
use std::path::{Path, PathBuf};

use pipescale_core::allocator::{
    allocate, allocate_hardware_only, allocate_pipeline_agnostic, build_milp, AllocError, AllocationPlan,
    DemandEstimate, PlanMode,
};
use pipescale_core::milp::export_lp_file;
use pipescale_core::sim::{initial_routing, run};
use pipescale_core::{ClusterConfig, DropPolicy, Pipeline, PolicyMode};
use rayon::prelude::*;
use serde_json::json;

use crate::experiment::Experiment;
use crate::io::IoError;
use crate::output::{fmt_f64, round_floats, write_outputs, write_text, RunInfo};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Write { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(runtime)
}

/// Throughput of `S` workers hosting the variant at its fastest allowed,
/// profiled batch size; zero when no allowed batch is profiled.
pub fn max_variant_capacity(pipeline: &Pipeline, cluster: &ClusterConfig, task: usize, k: usize) -> f64 {
    let profile = &pipeline.variants(task)[k];
    let best = cluster.allowed_batches.iter().filter_map(|&b| profile.throughput_at(b)).fold(0.0, f64::max);
    best * cluster.worker_count as f64
}

pub fn cmd_validate(config: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let exp = Experiment::load(config)?;
    exp.sim_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (p, c) = (&exp.pipeline, &exp.cluster);
    let g = p.graph();
    for task in 0..g.task_count() {
        for (k, v) in p.variants(task).iter().enumerate() {
            let cap = max_variant_capacity(p, c, task, k);
            emit(out, &format!("{}/{}: max {} qps on {} workers", g.task_id(task), v.id, fmt_f64(cap), c.worker_count))?;
        }
    }
    emit(out, &format!("config digest {}", exp.digest()))?;
    emit(out, &format!("{} paths, OK", p.paths().len()))
}

/// Plans for `demand_qps` with the planner of `mode`.
pub fn plan_once(
    pipeline: &Pipeline,
    cluster: &ClusterConfig,
    demand_qps: f64,
    mode: PolicyMode,
) -> Result<AllocationPlan, AllocError> {
    let d = DemandEstimate::profiled(pipeline, demand_qps);
    match mode {
        PolicyMode::PipelineAware => allocate(pipeline, cluster, &d),
        PolicyMode::HardwareOnly => allocate_hardware_only(pipeline, cluster, &d),
        PolicyMode::PipelineAgnostic => allocate_pipeline_agnostic(pipeline, cluster, &d),
    }
}

fn to_json_text(mut v: serde_json::Value) -> String {
    round_floats(&mut v);
    serde_json::to_string_pretty(&v).expect("JSON value serializes")
}

pub fn cmd_allocate(
    config: &Path,
    demand_qps: f64,
    policy: PolicyMode,
    export_lp: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exp = Experiment::load(config)?;
    if !(demand_qps.is_finite() && demand_qps >= 0.0) {
        return Err(CliError::Config(format!("demand {demand_qps} must be a nonnegative number")));
    }
    let (p, c) = (&exp.pipeline, &exp.cluster);
    let result = plan_once(p, c, demand_qps, policy);
    if let Some(path) = export_lp {
        // The model of the step that produced the plan; the accuracy
        // scaling step when nothing fits.
        let mode = match &result {
            Ok(plan) => plan.mode,
            Err(_) => PlanMode::AccuracyScaling,
        };
        let lp = build_milp(p, c, &DemandEstimate::profiled(p, demand_qps), mode);
        write_text(path, &export_lp_file(&lp).map_err(runtime)?)?;
    }
    match result {
        Ok(plan) => emit(out, &to_json_text(serde_json::to_value(plan.to_report(p)).map_err(runtime)?)),
        Err(AllocError::TotallyInfeasible { max_feasible_demand, best_effort }) => {
            let report = json!({
                "status": "infeasible",
                "demand_qps": demand_qps,
                "max_feasible_demand": max_feasible_demand,
                "best_effort": best_effort.to_report(p),
            });
            emit(out, &to_json_text(report))?;
            Err(CliError::Infeasible(format!("demand {demand_qps} qps exceeds the cluster; at most {max_feasible_demand:.3} qps fit")))
        }
        Err(e @ AllocError::BudgetNonPositive { .. }) => {
            emit(out, &to_json_text(json!({"status": "infeasible", "demand_qps": demand_qps, "max_feasible_demand": 0.0, "reason": e.to_string()})))?;
            Err(CliError::Infeasible(e.to_string()))
        }
        Err(e @ (AllocError::InvalidConfig(_) | AllocError::InvalidDemand(_))) => Err(CliError::Config(e.to_string())),
        Err(e) => Err(runtime(e)),
    }
}

pub struct SimulateArgs<'a> {
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
    pub dump_routes: Option<&'a Path>,
}

fn reseeded(exp: &Experiment, seed: u64) -> Result<Experiment, CliError> {
    let mut config = exp.config.clone();
    config.seed = seed;
    Ok(Experiment::from_config(config, exp.base_dir.clone())?)
}

fn run_info(exp: &Experiment) -> RunInfo {
    RunInfo {
        config_digest: exp.digest().to_string(),
        seed: exp.config.seed,
        policy_mode: exp.config.policy_mode,
        drop_policy: exp.config.drop_policy,
    }
}

pub fn cmd_simulate(config: &Path, args: SimulateArgs<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut exp = Experiment::load(config)?;
    if let Some(seed) = args.seed {
        exp = reseeded(&exp, seed)?;
    }
    let out_dir: PathBuf = match args.out_dir {
        Some(d) => d.to_path_buf(),
        None => exp.output_dir().ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?,
    };
    let cfg = exp.sim_config();
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = args.dump_routes {
        let (plan, routing) = initial_routing(&cfg).map_err(runtime)?;
        let dump = json!({ "plan": plan.to_report(&cfg.pipeline), "routing": routing });
        write_text(path, &(to_json_text(dump) + "\n"))?;
    }
    let result = run(&cfg).map_err(runtime)?.result;
    let info = run_info(&exp);
    write_outputs(&result, &info, &out_dir)?;
    emit(out, crate::output::summary_json(&result, &info).trim_end())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Demand,
    Slo,
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// `ok`, `overloaded` (only part of the demand fits) or `infeasible`
    /// (no request can meet the objective).
    pub status: &'static str,
    pub mode: Option<PlanMode>,
    pub workers_used: Option<u32>,
    pub planned_accuracy: Option<f64>,
    pub served_fraction: Option<f64>,
    pub system_accuracy: Option<f64>,
    pub accuracy_drop: Option<f64>,
    pub slo_violation_ratio: Option<f64>,
    pub cluster_utilization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBoundary {
    pub before: f64,
    pub after: f64,
    pub from: PlanMode,
    pub to: PlanMode,
}

/// Values `from, from + step, ...` up to `to` inclusive (with a little
/// slack for accumulated rounding).
pub fn sweep_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(from.is_finite() && to.is_finite() && step.is_finite() && step != 0.0) || (to - from) / step < 0.0 {
        return Err(CliError::Config(format!("bad sweep range {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

fn plan_row(value: f64, plan: &AllocationPlan, status: &'static str) -> SweepRow {
    SweepRow {
        value,
        status,
        mode: Some(plan.mode),
        workers_used: Some(plan.workers_used()),
        planned_accuracy: Some(plan.planned_accuracy),
        served_fraction: Some(plan.served_fraction),
        system_accuracy: None,
        accuracy_drop: None,
        slo_violation_ratio: None,
        cluster_utilization: None,
    }
}

fn infeasible_row(value: f64) -> SweepRow {
    SweepRow {
        value,
        status: "infeasible",
        mode: None,
        workers_used: None,
        planned_accuracy: None,
        served_fraction: None,
        system_accuracy: None,
        accuracy_drop: None,
        slo_violation_ratio: None,
        cluster_utilization: None,
    }
}

/// Classifies a one-shot allocation for a sweep.
fn sweep_plan(value: f64, result: Result<AllocationPlan, AllocError>) -> Result<SweepRow, CliError> {
    match result {
        Ok(plan) => Ok(plan_row(value, &plan, "ok")),
        Err(AllocError::TotallyInfeasible { max_feasible_demand, best_effort }) if max_feasible_demand > 0.0 => {
            Ok(plan_row(value, &best_effort, "overloaded"))
        }
        Err(AllocError::TotallyInfeasible { .. } | AllocError::BudgetNonPositive { .. }) => Ok(infeasible_row(value)),
        Err(e) => Err(runtime(e)),
    }
}

/// Demand sweep: the planner alone at each demand.
pub fn demand_sweep(exp: &Experiment, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    let mode = exp.config.policy_mode;
    values
        .par_iter()
        .map(|&d| sweep_plan(d, plan_once(&exp.pipeline, &exp.cluster, d, mode)))
        .collect()
}

/// Highest path accuracy of the pipeline.
pub fn best_path_accuracy(pipeline: &Pipeline) -> f64 {
    (0..pipeline.paths().len()).map(|p| pipeline.path_accuracy(p)).fold(0.0, f64::max)
}

/// SLO sweep: a full simulation per objective. Feasibility is judged by
/// planning for the workload's mean demand.
pub fn slo_sweep(exp: &Experiment, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    let seconds = exp.arrivals.seconds().max(1) as f64;
    let mean_qps = exp.arrivals.len() as f64 / seconds;
    let best = best_path_accuracy(&exp.pipeline);
    values
        .par_iter()
        .map(|&slo| {
            let cluster = ClusterConfig { slo_ms: slo, ..exp.cluster.clone() };
            if cluster.validate().is_err() {
                return Ok(infeasible_row(slo));
            }
            let mut row = sweep_plan(slo, plan_once(&exp.pipeline, &cluster, mean_qps, exp.config.policy_mode))?;
            if row.status == "infeasible" {
                return Ok(row);
            }
            let mut cfg = exp.sim_config();
            cfg.cluster = cluster;
            let s = run(&cfg).map_err(runtime)?.result.summary;
            row.system_accuracy = s.system_accuracy;
            row.accuracy_drop = s.system_accuracy.map(|a| (best - a).max(0.0));
            row.slo_violation_ratio = s.slo_violation_ratio;
            row.cluster_utilization = s.cluster_utilization;
            Ok(row)
        })
        .collect()
}

/// Adjacent points whose plan modes differ.
pub fn phase_boundaries(rows: &[SweepRow]) -> Vec<PhaseBoundary> {
    rows.windows(2)
        .filter_map(|w| match (w[0].mode, w[1].mode) {
            (Some(a), Some(b)) if a != b => Some(PhaseBoundary { before: w[0].value, after: w[1].value, from: a, to: b }),
            _ => None,
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(variable: SweepVariable, rows: &[SweepRow]) -> String {
    let name = match variable {
        SweepVariable::Demand => "demand_qps",
        SweepVariable::Slo => "slo_ms",
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record([
        name,
        "status",
        "mode",
        "workers_used",
        "planned_accuracy",
        "served_fraction",
        "system_accuracy",
        "accuracy_drop",
        "slo_violation_ratio",
        "cluster_utilization",
    ])
    .expect("writing to memory");
    for r in rows {
        w.write_record([
            fmt_f64(r.value),
            r.status.to_string(),
            opt(r.mode.map(PlanMode::as_str)),
            opt(r.workers_used),
            opt(r.planned_accuracy.map(fmt_f64)),
            opt(r.served_fraction.map(fmt_f64)),
            opt(r.system_accuracy.map(fmt_f64)),
            opt(r.accuracy_drop.map(fmt_f64)),
            opt(r.slo_violation_ratio.map(fmt_f64)),
            opt(r.cluster_utilization.map(fmt_f64)),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV output is UTF-8")
}

pub struct SweepArgs<'a> {
    pub variable: SweepVariable,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub out_dir: &'a Path,
}

pub fn cmd_sweep(config: &Path, args: SweepArgs<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let exp = Experiment::load(config)?;
    let values = sweep_values(args.from, args.to, args.step)?;
    let rows = match args.variable {
        SweepVariable::Demand => demand_sweep(&exp, &values)?,
        SweepVariable::Slo => slo_sweep(&exp, &values)?,
    };
    write_text(&args.out_dir.join("sweep.csv"), &sweep_csv(args.variable, &rows))?;
    let infeasible = rows.iter().filter(|r| r.status == "infeasible").count();
    emit(out, &format!("{} points, {} infeasible", rows.len(), infeasible))?;
    for b in phase_boundaries(&rows) {
        emit(out, &format!("phase boundary {} -> {}: {} -> {}", b.before, b.after, b.from.as_str(), b.to.as_str()))?;
    }
    Ok(())
}

/// Summary of one (planner, drop policy, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub policy_mode: PolicyMode,
    pub drop_policy: DropPolicy,
    pub seed: u64,
    pub summary: pipescale_core::metrics::Summary,
}

/// Runs every combination on paired seeds `seed0, seed0 + 1, ...`; the
/// workload of a given seed is shared by all combinations.
pub fn compare_runs(
    exp: &Experiment,
    modes: &[PolicyMode],
    drops: &[DropPolicy],
    seeds: usize,
) -> Result<Vec<CompareRow>, CliError> {
    let seed0 = exp.config.seed;
    let per_seed: Vec<Experiment> =
        (0..seeds as u64).map(|i| reseeded(exp, seed0.wrapping_add(i))).collect::<Result<_, _>>()?;
    let mut jobs = Vec::new();
    for &m in modes {
        for &d in drops {
            for e in &per_seed {
                jobs.push((m, d, e));
            }
        }
    }
    jobs.par_iter()
        .map(|&(m, d, e)| {
            let mut cfg = e.sim_config();
            cfg.policy_mode = m;
            cfg.drop_policy = d;
            let summary = run(&cfg).map_err(runtime)?.result.summary;
            Ok(CompareRow { policy_mode: m, drop_policy: d, seed: cfg.seed, summary })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record([
        "policy_mode",
        "drop_policy",
        "seed",
        "arrivals",
        "slo_violation_ratio",
        "system_accuracy",
        "cluster_utilization",
        "mean_active_workers",
        "max_accuracy_drop",
        "reroutes",
    ])
    .expect("writing to memory");
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.policy_mode.as_str().to_string(),
            r.drop_policy.as_str().to_string(),
            r.seed.to_string(),
            s.arrivals.to_string(),
            opt(s.slo_violation_ratio.map(fmt_f64)),
            opt(s.system_accuracy.map(fmt_f64)),
            opt(s.cluster_utilization.map(fmt_f64)),
            opt(s.mean_active_workers.map(fmt_f64)),
            opt(s.max_accuracy_drop.map(fmt_f64)),
            s.reroutes.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV output is UTF-8")
}

/// Mean of a summary metric over the rows of one combination.
pub fn mean_of(
    rows: &[CompareRow],
    mode: PolicyMode,
    drop: DropPolicy,
    metric: impl Fn(&pipescale_core::metrics::Summary) -> Option<f64>,
) -> Option<f64> {
    let values: Vec<f64> =
        rows.iter().filter(|r| r.policy_mode == mode && r.drop_policy == drop).filter_map(|r| metric(&r.summary)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub struct CompareArgs<'a> {
    pub modes: Vec<PolicyMode>,
    pub drops: Option<Vec<DropPolicy>>,
    pub seeds: usize,
    pub out_dir: &'a Path,
}

pub fn cmd_compare(config: &Path, args: CompareArgs<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let exp = Experiment::load(config)?;
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let drops = args.drops.unwrap_or_else(|| vec![exp.config.drop_policy]);
    let rows = compare_runs(&exp, &args.modes, &drops, args.seeds)?;
    write_text(&args.out_dir.join("compare.csv"), &compare_csv(&rows))?;
    for &m in &args.modes {
        for &d in &drops {
            let v = mean_of(&rows, m, d, |s| s.slo_violation_ratio);
            let a = mean_of(&rows, m, d, |s| s.system_accuracy);
            let w = mean_of(&rows, m, d, |s| s.mean_active_workers);
            emit(
                out,
                &format!(
                    "{:<18} {:<24} violation {}  accuracy {}  workers {}",
                    m.as_str(),
                    d.as_str(),
                    opt(v.map(fmt_f64)),
                    opt(a.map(fmt_f64)),
                    opt(w.map(fmt_f64))
                ),
            )?;
        }
    }
    Ok(())
}
