//! The allocation MILP.
//!
//! Variables per vertex `v` and allowed batch size `b`: a one-hot batch
//! selector `z(v,b)` and an instance count `w(v,b)`; per path `p`: the flow
//! share `c(p)` and an activity indicator `I(p)`.
//!
//! Load on a vertex is counted once per request even when the tree branches
//! below it: the arrival rate at `v` is read off the paths that end at the
//! first sink under `v`'s task (its *canonical sink*), normalized by that
//! sink's share. Prefix-consistency rows make every sink under a branching
//! task agree on how much traffic each upstream prefix carries, so the choice
//! of canonical sink is immaterial. For chains this is exactly
//! `sum_p D c(p) m(p,v)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ClusterConfig, DemandEstimate, PlanMode};
use crate::milp::{LinearProgram, Relation, Sense, VarId};
use crate::model::{Pipeline, VertexId};

/// How the per-sink coverage rows are stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coverage {
    /// `sum_{p->s} c(p) = g(s)`: all demand must be served.
    Exact,
    /// `sum_{p->s} c(p) <= g(s)`: serve as much as fits.
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Settings {
    pub mode: PlanMode,
    pub coverage: Coverage,
    /// Replaces the per-path effective budget when set.
    pub budget_override_ms: Option<f64>,
}

/// A built allocation MILP together with the handles needed to decode it.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub lp: LinearProgram,
    /// Allowed and profiled batch sizes per vertex index.
    pub(crate) batches: Vec<Vec<u32>>,
    pub(crate) z: Vec<Vec<VarId>>,
    pub(crate) w: Vec<Vec<VarId>>,
    pub(crate) c: Vec<VarId>,
    pub(crate) active: Vec<VarId>,
    /// `sum_p c(p) A(p) / sum_s g(s)`.
    pub(crate) accuracy_terms: Vec<(VarId, f64)>,
    /// Fraction of root requests served (`1` under exact coverage).
    pub(crate) served_terms: Vec<(VarId, f64)>,
    /// Worker count tie-breaker: sum of batch ranks of the selectors.
    pub(crate) batch_rank_terms: Vec<(VarId, f64)>,
    pub(crate) worker_terms: Vec<(VarId, f64)>,
}

/// Builds the allocation MILP for `mode` with full demand coverage.
pub fn build_milp(pipeline: &Pipeline, cfg: &ClusterConfig, demand: &DemandEstimate, mode: PlanMode) -> LinearProgram {
    let settings = Settings { mode, coverage: Coverage::Exact, budget_override_ms: None };
    formulate(pipeline, cfg, demand, &settings).lp
}

pub(crate) fn formulate(
    pipeline: &Pipeline,
    cfg: &ClusterConfig,
    demand: &DemandEstimate,
    settings: &Settings,
) -> Formulation {
    let g = pipeline.graph();
    let s_max = cfg.worker_count as f64;
    let paths = pipeline.paths();
    let vertices = pipeline.vertices();
    let sense = match settings.mode {
        PlanMode::HardwareScaling => Sense::Minimize,
        PlanMode::AccuracyScaling => Sense::Maximize,
    };
    let mut lp = LinearProgram::new(sense);

    let top: Vec<Vec<usize>> = (0..g.task_count()).map(|t| pipeline.top_variants(t)).collect();
    let pinned = |v: VertexId| settings.mode == PlanMode::HardwareScaling && !top[v.task].contains(&v.variant);

    let mut batches = Vec::with_capacity(vertices.len());
    let mut z = Vec::with_capacity(vertices.len());
    let mut w = Vec::with_capacity(vertices.len());
    let mut batch_rank_terms = Vec::new();
    let mut worker_terms = Vec::new();
    for &v in vertices {
        let profile = pipeline.profile(v);
        let bs: Vec<u32> =
            cfg.allowed_batches.iter().copied().filter(|&b| profile.throughput_at(b).is_some()).collect();
        let upper = if pinned(v) { 0.0 } else { 1.0 };
        let mut zs = Vec::with_capacity(bs.len());
        let mut ws = Vec::with_capacity(bs.len());
        for &b in &bs {
            let zv = lp.binary(format!("z_t{}_v{}_b{b}", v.task, v.variant));
            lp.variables[zv.0].upper = upper;
            let wv = lp.integer(format!("w_t{}_v{}_b{b}", v.task, v.variant), 0.0, s_max * upper);
            let rank = cfg.allowed_batches.iter().position(|&x| x == b).unwrap_or(0) + 1;
            batch_rank_terms.push((zv, rank as f64));
            worker_terms.push((wv, 1.0));
            zs.push(zv);
            ws.push(wv);
        }
        batches.push(bs);
        z.push(zs);
        w.push(ws);
    }

    let mut c = Vec::with_capacity(paths.len());
    let mut active = Vec::with_capacity(paths.len());
    for (pi, p) in paths.iter().enumerate() {
        let share = g.share(p.sink_task());
        c.push(lp.continuous(format!("c_p{pi}"), 0.0, share));
        active.push(lp.binary(format!("I_p{pi}")));
    }

    let total_share: f64 = g.sinks().iter().map(|&s| g.share(s)).sum();
    let accuracy_terms: Vec<(VarId, f64)> =
        (0..paths.len()).map(|pi| (c[pi], pipeline.path_accuracy(pi) / total_share)).collect();
    let root_sink = g.sinks_below(g.root())[0];
    let served_terms: Vec<(VarId, f64)> = (0..paths.len())
        .filter(|&pi| paths[pi].sink_task() == root_sink)
        .map(|pi| (c[pi], 1.0 / g.share(root_sink)))
        .collect();

    match settings.mode {
        PlanMode::HardwareScaling => {
            for &(wv, coef) in &worker_terms {
                lp.set_objective_coef(wv, coef);
            }
        }
        PlanMode::AccuracyScaling => {
            for &(cv, coef) in &accuracy_terms {
                lp.set_objective_coef(cv, coef);
            }
        }
    }

    // One batch size per vertex, and instances only at the selected size.
    for (vi, &v) in vertices.iter().enumerate() {
        if z[vi].is_empty() {
            continue;
        }
        lp.add_constraint(
            format!("onehot_t{}_v{}", v.task, v.variant),
            z[vi].iter().map(|&zv| (zv, 1.0)).collect(),
            Relation::Le,
            1.0,
        );
        for (j, &b) in batches[vi].iter().enumerate() {
            lp.add_constraint(
                format!("link_t{}_v{}_b{b}", v.task, v.variant),
                vec![(w[vi][j], 1.0), (z[vi][j], -s_max)],
                Relation::Le,
                0.0,
            );
        }
    }

    // Capacity: arriving load never exceeds hosted throughput.
    for (vi, &v) in vertices.iter().enumerate() {
        let canonical = g.sinks_below(v.task)[0];
        let share = g.share(canonical);
        let mut terms: Vec<(VarId, f64)> = Vec::new();
        for &pi in pipeline.augmented().paths_through(v) {
            let p = &paths[pi];
            if p.sink_task() != canonical {
                continue;
            }
            let m = pipeline.path_multiplier_with(p, v, &demand.mult_factors).expect("vertex on path");
            let coef = demand.qps * m / share;
            if coef != 0.0 {
                terms.push((c[pi], coef));
            }
        }
        let profile = pipeline.profile(v);
        for (j, &b) in batches[vi].iter().enumerate() {
            let q = profile.throughput_at(b).expect("profiled batch");
            terms.push((w[vi][j], -q));
        }
        lp.add_constraint(format!("cap_t{}_v{}", v.task, v.variant), terms, Relation::Le, 0.0);
    }

    lp.add_constraint("workers", worker_terms.clone(), Relation::Le, s_max);

    // Latency of active paths, and activity requires a batch at every vertex.
    for (pi, p) in paths.iter().enumerate() {
        let budget = settings.budget_override_ms.unwrap_or_else(|| super::path_budget_ms(cfg, p.hops()));
        let mut worst = 0.0;
        let mut terms = Vec::new();
        for &v in &p.vertices {
            let vi = pipeline.vertex_index(v);
            let profile = pipeline.profile(v);
            let mut vertex_worst: f64 = 0.0;
            for (j, &b) in batches[vi].iter().enumerate() {
                let lat = profile.batch_latency_ms(b).expect("profiled batch");
                vertex_worst = vertex_worst.max(lat);
                terms.push((z[vi][j], lat));
            }
            worst += vertex_worst;
        }
        let big_m = (worst - budget).max(0.0);
        terms.push((active[pi], big_m));
        lp.add_constraint(format!("lat_p{pi}"), terms, Relation::Le, budget + big_m);

        let share = g.share(p.sink_task());
        lp.add_constraint(format!("act_p{pi}"), vec![(c[pi], 1.0), (active[pi], -share)], Relation::Le, 0.0);
        for &v in &p.vertices {
            let vi = pipeline.vertex_index(v);
            let mut terms: Vec<(VarId, f64)> = z[vi].iter().map(|&zv| (zv, 1.0)).collect();
            terms.push((active[pi], -1.0));
            lp.add_constraint(format!("sel_p{pi}_t{}", v.task), terms, Relation::Ge, 0.0);
        }
    }

    // Coverage per sink.
    for s in g.sinks() {
        let terms: Vec<(VarId, f64)> =
            (0..paths.len()).filter(|&pi| paths[pi].sink_task() == s).map(|pi| (c[pi], 1.0)).collect();
        let relation = match settings.coverage {
            Coverage::Exact => Relation::Eq,
            Coverage::AtMost => Relation::Le,
        };
        lp.add_constraint(format!("cover_t{s}"), terms, relation, g.share(s));
    }

    // Prefix consistency below branching tasks.
    for t in 0..g.task_count() {
        if g.children(t).len() < 2 {
            continue;
        }
        let sinks = g.sinks_below(t);
        let depth = g.depth(t);
        let canonical = sinks[0];
        let mut groups: BTreeMap<Vec<VertexId>, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
        for (pi, p) in paths.iter().enumerate() {
            if sinks.contains(&p.sink_task()) {
                groups
                    .entry(p.vertices[..depth].to_vec())
                    .or_default()
                    .entry(p.sink_task())
                    .or_default()
                    .push(pi);
            }
        }
        for (gi, by_sink) in groups.values().enumerate() {
            let base = &by_sink[&canonical];
            for &s in &sinks[1..] {
                let mut terms: Vec<(VarId, f64)> = by_sink[&s].iter().map(|&pi| (c[pi], 1.0 / g.share(s))).collect();
                terms.extend(base.iter().map(|&pi| (c[pi], -1.0 / g.share(canonical))));
                lp.add_constraint(format!("split_t{t}_g{gi}_s{s}"), terms, Relation::Eq, 0.0);
            }
        }
    }

    Formulation {
        lp,
        batches,
        z,
        w,
        c,
        active,
        accuracy_terms,
        served_terms,
        batch_rank_terms,
        worker_terms,
    }
}

impl Formulation {
    /// Replaces the objective with `terms` in direction `sense`.
    pub(crate) fn set_objective(&mut self, sense: Sense, terms: &[(VarId, f64)]) {
        self.lp.sense = sense;
        self.lp.objective.iter_mut().for_each(|c| *c = 0.0);
        for &(v, coef) in terms {
            self.lp.objective[v.0] += coef;
        }
    }
}
