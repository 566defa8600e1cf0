//! Exact grid search for the best flow-weighted accuracy a two-task chain
//! can reach with given workers, used to judge the greedy router.

#![allow(dead_code)]

use std::collections::HashMap;

use pipescale_core::model::{EdgeSpec, PathAccuracySpec, TaskSpec, VariantSpec};
use pipescale_core::router::most_accurate_first;
use pipescale_core::{Pipeline, PipelineSpec, VertexId, WorkerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Chain A -> B with two variants per task. Capacities, demand and
/// multiplicative factors are integers so every flow split lies on the
/// 1 qps grid.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    /// Single-model accuracies, best first.
    pub acc_a: [f64; 2],
    pub acc_b: [f64; 2],
    /// `path_acc[i][j]` for (a_i, b_j).
    pub path_acc: [[f64; 2]; 2],
    pub mult_a: [u32; 2],
    /// (variant, capacity) of each worker.
    pub workers_a: Vec<(usize, u32)>,
    pub workers_b: Vec<(usize, u32)>,
    pub demand: u32,
}

impl ChainInstance {
    pub fn pipeline(&self) -> Pipeline {
        let variant = |id: String, acc: f64, r: f64| VariantSpec {
            id,
            accuracy: acc,
            mult_factor: r,
            throughput: [("1".to_string(), 1000.0)].into_iter().collect(),
        };
        let spec = PipelineSpec {
            tasks: vec![
                TaskSpec {
                    id: "A".into(),
                    variants: (0..2).map(|k| variant(format!("a{k}"), self.acc_a[k], self.mult_a[k] as f64)).collect(),
                },
                TaskSpec { id: "B".into(), variants: (0..2).map(|k| variant(format!("b{k}"), self.acc_b[k], 1.0)).collect() },
            ],
            edges: vec![EdgeSpec { from: "A".into(), to: "B".into(), branch_ratio: 1.0 }],
            path_accuracy: (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| PathAccuracySpec { path: vec![format!("a{i}"), format!("b{j}")], acc: self.path_acc[i][j] })
                .collect(),
        };
        Pipeline::from_spec(&spec).expect("valid chain")
    }

    pub fn workers(&self) -> Vec<WorkerState> {
        let mut out = Vec::new();
        for (task, list, acc) in [(0, &self.workers_a, self.acc_a), (1, &self.workers_b, self.acc_b)] {
            for &(k, cap) in list {
                out.push(WorkerState {
                    id: out.len(),
                    vertex: VertexId { task, variant: k },
                    capacity_qps: cap as f64,
                    incoming_qps: 0.0,
                    exec_ms: 1.0,
                    accuracy: acc[k],
                });
            }
        }
        out
    }

    /// Accuracy mass per root request realized by the greedy tables.
    pub fn greedy_value(&self) -> f64 {
        let p = self.pipeline();
        let r = most_accurate_first(&p, &self.workers(), self.demand as f64, &p.mult_factors());
        r.path_fractions(&p).iter().enumerate().map(|(pi, f)| f * p.path_accuracy(pi)).sum()
    }

    /// Best accuracy mass per root request over every integer split that
    /// routes as many root requests as the root task can take and fits the
    /// downstream capacities; `None` if no split fits.
    pub fn brute_force_value(&self) -> Option<f64> {
        let cap_a: u32 = self.workers_a.iter().map(|w| w.1).sum();
        let served = self.demand.min(cap_a);
        if self.demand == 0 {
            return Some(0.0);
        }
        let mut best: Option<f64> = None;
        let mut split = vec![0u32; self.workers_a.len()];
        self.enumerate_a(0, served, &mut split, &mut best);
        best.map(|b| b / self.demand as f64)
    }

    fn enumerate_a(&self, i: usize, left: u32, split: &mut Vec<u32>, best: &mut Option<f64>) {
        if i == self.workers_a.len() {
            if left == 0 {
                if let Some(v) = self.best_downstream(split) {
                    *best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            return;
        }
        for f in 0..=left.min(self.workers_a[i].1) {
            split[i] = f;
            self.enumerate_a(i + 1, left - f, split, best);
        }
        split[i] = 0;
    }

    /// Exact maximum of sum x_ij * A(a_i, b_j) / r_i over integer
    /// assignments of each A worker's output to B workers, by dynamic
    /// programming over the remaining B capacities.
    fn best_downstream(&self, split: &[u32]) -> Option<f64> {
        let caps: Vec<u32> = self.workers_b.iter().map(|w| w.1).collect();
        let mut memo = HashMap::new();
        self.assign(0, split, caps, &mut memo)
    }

    fn assign(&self, i: usize, split: &[u32], caps: Vec<u32>, memo: &mut HashMap<(usize, Vec<u32>), Option<f64>>) -> Option<f64> {
        if i == split.len() {
            return Some(0.0);
        }
        if let Some(v) = memo.get(&(i, caps.clone())) {
            return *v;
        }
        let (ka, _) = self.workers_a[i];
        let r = self.mult_a[ka];
        let out = split[i] * r;
        let mut best: Option<f64> = None;
        let mut take = vec![0u32; caps.len()];
        self.spread(i, 0, out, &caps, &mut take, split, memo, &mut best);
        memo.insert((i, caps), best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn spread(
        &self,
        i: usize,
        j: usize,
        left: u32,
        caps: &[u32],
        take: &mut Vec<u32>,
        split: &[u32],
        memo: &mut HashMap<(usize, Vec<u32>), Option<f64>>,
        best: &mut Option<f64>,
    ) {
        if j == caps.len() {
            if left > 0 {
                return;
            }
            let (ka, _) = self.workers_a[i];
            let r = self.mult_a[ka] as f64;
            let here: f64 = take
                .iter()
                .zip(&self.workers_b)
                .map(|(&x, &(kb, _))| x as f64 * self.path_acc[ka][kb] / r)
                .sum();
            let rest: Vec<u32> = caps.iter().zip(take.iter()).map(|(c, x)| c - x).collect();
            if let Some(v) = self.assign(i + 1, split, rest, memo) {
                let total = here + v;
                *best = Some(best.map_or(total, |b: f64| b.max(total)));
            }
            return;
        }
        for x in 0..=left.min(caps[j]) {
            take[j] = x;
            self.spread(i, j + 1, left - x, caps, take, split, memo, best);
        }
        take[j] = 0;
    }
}

fn workers(rng: &mut ChaCha8Rng, n: usize, max_cap: u32) -> Vec<(usize, u32)> {
    (0..n).map(|_| (rng.random_range(0..2), rng.random_range(1..=max_cap))).collect()
}

/// Unit multiplicative factors and product-form path accuracies.
pub fn restricted_instance(rng: &mut ChaCha8Rng) -> ChainInstance {
    let mut acc = || {
        let hi: f64 = rng.random_range(0.6..1.0);
        [(hi * 100.0).round() / 100.0, ((hi - rng.random_range(0.05..0.4)) * 100.0).round() / 100.0]
    };
    let (acc_a, acc_b) = (acc(), acc());
    let path_acc = [[acc_a[0] * acc_b[0], acc_a[0] * acc_b[1]], [acc_a[1] * acc_b[0], acc_a[1] * acc_b[1]]];
    let n_a = rng.random_range(1..=3);
    let n_b = rng.random_range(1..=3);
    let workers_a = workers(rng, n_a, 15);
    let mut workers_b = workers(rng, n_b, 15);
    let cap_a: u32 = workers_a.iter().map(|w| w.1).sum();
    let demand = rng.random_range(0..=cap_a.min(30) + 5);
    // Enough downstream capacity for everything the root task can take.
    let cap_b: u32 = workers_b.iter().map(|w| w.1).sum();
    if cap_b < cap_a.min(demand) {
        workers_b[0].1 += cap_a.min(demand) - cap_b;
    }
    ChainInstance { acc_a, acc_b, path_acc, mult_a: [1, 1], workers_a, workers_b, demand }
}

/// Any monotone path accuracy table and multiplicative factors in {1, 2}.
pub fn general_instance(rng: &mut ChaCha8Rng) -> ChainInstance {
    let mut inst = restricted_instance(rng);
    let mut p = [[0.0f64; 2]; 2];
    p[1][1] = rng.random_range(0.3..0.6);
    p[0][1] = p[1][1] + rng.random_range(0.0..0.4);
    p[1][0] = p[1][1] + rng.random_range(0.0..0.4);
    p[0][0] = p[0][1].max(p[1][0]) + rng.random_range(0.0..0.2);
    for row in &mut p {
        for a in row.iter_mut() {
            *a = (a.min(1.0) * 1000.0).round() / 1000.0;
        }
    }
    inst.path_acc = p;
    inst.mult_a = [rng.random_range(1..=2), rng.random_range(1..=2)];
    let cap_a: u32 = inst.workers_a.iter().map(|w| w.1).sum();
    let need = 2 * cap_a.min(inst.demand);
    let cap_b: u32 = inst.workers_b.iter().map(|w| w.1).sum();
    if cap_b < need {
        inst.workers_b[0].1 += need - cap_b;
    }
    inst
}

/// A two-task chain on which filling the most accurate root worker first
/// is not optimal: a0 doubles its traffic, which pushes half of it onto the
/// weak b1 path, while routing everything through a1 keeps every request on
/// an accurate path.
pub fn greedy_counterexample() -> ChainInstance {
    ChainInstance {
        acc_a: [1.0, 0.99],
        acc_b: [1.0, 0.6],
        path_acc: [[1.0, 0.61], [0.99, 0.6]],
        mult_a: [2, 1],
        workers_a: vec![(0, 20), (1, 20)],
        workers_b: vec![(0, 20), (1, 100)],
        demand: 20,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
