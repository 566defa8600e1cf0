//! Pipeline trees, variant profiles and the augmented (variant-level) graph.
//!
//! A pipeline is a rooted tree of tasks. Every task can be served by several
//! model variants that trade accuracy for throughput. Materializing a variant
//! choice for every task on a root-to-sink task path gives a *path* of the
//! augmented graph; end-to-end accuracy is profiled per path.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Tolerance used when validating monotonicity of path accuracies.
const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("pipeline is not a rooted tree: {0}")]
    NotATree(String),
    #[error("edge references unknown task `{0}`")]
    UnknownTaskRef(String),
    #[error("branch ratio {ratio} on edge {from}->{to} is outside (0, 1]")]
    BranchRatioOutOfRange { from: String, to: String, ratio: f64 },
    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),
    #[error("task `{0}` has no variants")]
    TaskWithoutVariants(String),
    #[error("invalid profile for {task}/{variant}: {reason}")]
    InvalidProfile { task: String, variant: String, reason: String },
    #[error("path accuracy entry {path:?}: {reason}")]
    InvalidPathAccuracy { path: Vec<String>, reason: String },
    #[error("no profiled accuracy for path {0:?}")]
    MissingPathAccuracy(Vec<String>),
    #[error("path accuracy is not monotone: {worse:?} ({worse_acc}) scores above {better:?} ({better_acc})")]
    NonMonotoneAccuracy { worse: Vec<String>, worse_acc: f64, better: Vec<String>, better_acc: f64 },
    #[error("vertex is not on the path")]
    VertexNotOnPath,
    #[error("no batch size chosen for {0}")]
    MissingBatchChoice(String),
    #[error("batch size {batch} is not profiled for {vertex}")]
    BatchNotProfiled { vertex: String, batch: u32 },
}

// ---------------------------------------------------------------------------
// Input file schema
// ---------------------------------------------------------------------------

/// Serialized pipeline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub path_accuracy: Vec<PathAccuracySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub variants: Vec<VariantSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub id: String,
    pub accuracy: f64,
    #[serde(default = "default_mult_factor")]
    pub mult_factor: f64,
    /// Batch size (as a decimal string key) to queries per second.
    pub throughput: BTreeMap<String, f64>,
}

fn default_mult_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    #[serde(default = "default_branch_ratio")]
    pub branch_ratio: f64,
}

fn default_branch_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAccuracySpec {
    /// Variant ids from the root task down to a sink task.
    pub path: Vec<String>,
    pub acc: f64,
}

// ---------------------------------------------------------------------------
// Pipeline graph
// ---------------------------------------------------------------------------

/// Validated task tree. Tasks are stored in a fixed topological order
/// (parents before children, ties by declaration order); index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineGraph {
    ids: Vec<String>,
    parent: Vec<Option<usize>>,
    /// Branch ratio of the edge entering each task (1.0 for the root).
    in_ratio: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl PipelineGraph {
    pub fn task_count(&self) -> usize {
        self.ids.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn task_id(&self, task: usize) -> &str {
        &self.ids[task]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|t| t == id)
    }

    pub fn parent(&self, task: usize) -> Option<usize> {
        self.parent[task]
    }

    pub fn children(&self, task: usize) -> &[usize] {
        &self.children[task]
    }

    /// Ratio on the edge from the parent into `task`.
    pub fn branch_ratio(&self, task: usize) -> f64 {
        self.in_ratio[task]
    }

    pub fn is_sink(&self, task: usize) -> bool {
        self.children[task].is_empty()
    }

    pub fn sinks(&self) -> Vec<usize> {
        (0..self.task_count()).filter(|&t| self.is_sink(t)).collect()
    }

    /// Tasks on the root-to-`task` path, root first.
    pub fn path_to(&self, task: usize) -> Vec<usize> {
        let mut path = vec![task];
        let mut cur = task;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Number of tasks on the root-to-`task` path.
    pub fn depth(&self, task: usize) -> usize {
        self.path_to(task).len()
    }

    /// Product of branch ratios from the root down to `task` (g(s) for a sink).
    pub fn share(&self, task: usize) -> f64 {
        self.path_to(task).iter().map(|&t| self.in_ratio[t]).product()
    }

    /// Sinks reachable from `task`, in task order.
    pub fn sinks_below(&self, task: usize) -> Vec<usize> {
        self.sinks().into_iter().filter(|&s| self.path_to(s).contains(&task)).collect()
    }

    /// Every edge as `(parent, child, branch_ratio)` in child order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.task_count())
            .filter_map(|t| self.parent[t].map(|p| (p, t, self.in_ratio[t])))
            .collect()
    }
}

/// Validates the task tree of `spec` and fixes its topological order.
pub fn build_pipeline(spec: &PipelineSpec) -> Result<PipelineGraph, ModelError> {
    let n = spec.tasks.len();
    if n == 0 {
        return Err(ModelError::NotATree("pipeline has no tasks".into()));
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, t) in spec.tasks.iter().enumerate() {
        if index.insert(t.id.as_str(), i).is_some() {
            return Err(ModelError::DuplicateId(t.id.clone()));
        }
    }

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut in_ratio = vec![1.0; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &spec.edges {
        let from = *index.get(e.from.as_str()).ok_or_else(|| ModelError::UnknownTaskRef(e.from.clone()))?;
        let to = *index.get(e.to.as_str()).ok_or_else(|| ModelError::UnknownTaskRef(e.to.clone()))?;
        if !(e.branch_ratio > 0.0 && e.branch_ratio <= 1.0) {
            return Err(ModelError::BranchRatioOutOfRange {
                from: e.from.clone(),
                to: e.to.clone(),
                ratio: e.branch_ratio,
            });
        }
        if from == to {
            return Err(ModelError::NotATree(format!("self loop on `{}`", e.from)));
        }
        if parent[to].is_some() {
            return Err(ModelError::NotATree(format!("task `{}` has more than one parent", e.to)));
        }
        parent[to] = Some(from);
        in_ratio[to] = e.branch_ratio;
        children[from].push(to);
    }

    let roots: Vec<usize> = (0..n).filter(|&t| parent[t].is_none()).collect();
    match roots.len() {
        0 => return Err(ModelError::NotATree("no root task (cycle)".into())),
        1 => {}
        _ => {
            return Err(ModelError::NotATree(format!(
                "multiple roots: {}",
                roots.iter().map(|&r| spec.tasks[r].id.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    // Kahn's algorithm, always taking the lowest declaration index that is ready.
    let mut order = Vec::with_capacity(n);
    let mut ready: BTreeSet<usize> = roots.iter().copied().collect();
    while let Some(t) = ready.pop_first() {
        order.push(t);
        for &c in &children[t] {
            ready.insert(c);
        }
    }
    if order.len() != n {
        return Err(ModelError::NotATree("cycle detected".into()));
    }

    let mut position = vec![0; n];
    for (pos, &t) in order.iter().enumerate() {
        position[t] = pos;
    }
    let mut g = PipelineGraph {
        ids: order.iter().map(|&t| spec.tasks[t].id.clone()).collect(),
        parent: order.iter().map(|&t| parent[t].map(|p| position[p])).collect(),
        in_ratio: order.iter().map(|&t| in_ratio[t]).collect(),
        children: order.iter().map(|&t| children[t].iter().map(|&c| position[c]).collect()).collect(),
    };
    for ch in &mut g.children {
        ch.sort_unstable();
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Variant profiles
// ---------------------------------------------------------------------------

/// A model variant of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantProfile {
    pub id: String,
    pub accuracy: f64,
    /// Intermediate queries emitted per incoming query.
    pub mult_factor: f64,
    /// `(batch size, queries per second)`, ascending by batch size.
    pub throughput: Vec<(u32, f64)>,
}

impl VariantProfile {
    pub fn throughput_at(&self, batch: u32) -> Option<f64> {
        self.throughput.iter().find(|(b, _)| *b == batch).map(|&(_, q)| q)
    }

    /// Execution time in milliseconds of a full batch of size `batch`.
    pub fn batch_latency_ms(&self, batch: u32) -> Option<f64> {
        self.throughput_at(batch).map(|q| 1000.0 * batch as f64 / q)
    }

    pub fn batches(&self) -> impl Iterator<Item = u32> + '_ {
        self.throughput.iter().map(|&(b, _)| b)
    }

    fn from_spec(task: &str, v: &VariantSpec) -> Result<Self, ModelError> {
        let bad = |reason: String| ModelError::InvalidProfile {
            task: task.to_string(),
            variant: v.id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&v.accuracy) {
            return Err(bad(format!("accuracy {} outside [0, 1]", v.accuracy)));
        }
        if !(v.mult_factor >= 0.0 && v.mult_factor.is_finite()) {
            return Err(bad(format!("multiplicative factor {} must be a finite non-negative number", v.mult_factor)));
        }
        if v.throughput.is_empty() {
            return Err(bad("empty throughput table".into()));
        }
        let mut throughput = Vec::with_capacity(v.throughput.len());
        for (k, &q) in &v.throughput {
            let b: u32 = k.trim().parse().map_err(|_| bad(format!("batch key `{k}` is not a positive integer")))?;
            if b == 0 {
                return Err(bad("batch size 0".into()));
            }
            if !(q > 0.0 && q.is_finite()) {
                return Err(bad(format!("throughput {q} at batch {b} must be positive")));
            }
            throughput.push((b, q));
        }
        throughput.sort_by_key(|&(b, _)| b);
        for w in throughput.windows(2) {
            let (b0, q0) = w[0];
            let (b1, q1) = w[1];
            if b0 == b1 {
                return Err(bad(format!("batch size {b0} listed twice")));
            }
            if q1 < q0 {
                return Err(bad(format!("throughput decreases from batch {b0} to {b1}")));
            }
            if (b1 as f64) / q1 < (b0 as f64) / q0 {
                return Err(bad(format!("batch latency decreases from batch {b0} to {b1}")));
            }
        }
        Ok(VariantProfile { id: v.id.clone(), accuracy: v.accuracy, mult_factor: v.mult_factor, throughput })
    }
}

// ---------------------------------------------------------------------------
// Augmented graph
// ---------------------------------------------------------------------------

/// A `(task, variant)` vertex of the augmented graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId {
    pub task: usize,
    pub variant: usize,
}

impl VertexId {
    pub const fn new(task: usize, variant: usize) -> Self {
        VertexId { task, variant }
    }
}

/// Root-to-sink materialization: one vertex per task on the task path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Path {
    pub vertices: Vec<VertexId>,
}

impl Path {
    pub fn sink_task(&self) -> usize {
        self.vertices.last().map(|v| v.task).unwrap_or(0)
    }

    pub fn hops(&self) -> usize {
        self.vertices.len()
    }

    pub fn position(&self, v: VertexId) -> Option<usize> {
        self.vertices.iter().position(|&x| x == v)
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.position(v).is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    vertices: Vec<VertexId>,
    task_offset: Vec<usize>,
    edges: Vec<(VertexId, VertexId)>,
    paths: Vec<Path>,
    paths_through: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(VertexId, VertexId)] {
        &self.edges
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn vertex_index(&self, v: VertexId) -> usize {
        self.task_offset[v.task] + v.variant
    }

    /// Indices of the paths containing `v`.
    pub fn paths_through(&self, v: VertexId) -> &[usize] {
        &self.paths_through[self.vertex_index(v)]
    }

    pub fn path_index(&self, vertices: &[VertexId]) -> Option<usize> {
        self.paths.iter().position(|p| p.vertices == vertices)
    }
}

/// Expands every task into its variants and enumerates root-to-sink paths
/// depth-first: variants in declaration order, children in task order.
pub fn build_augmented_graph(
    g: &PipelineGraph,
    variants: &[Vec<VariantProfile>],
) -> Result<AugmentedGraph, ModelError> {
    for t in 0..g.task_count() {
        if variants.get(t).is_none_or(|v| v.is_empty()) {
            return Err(ModelError::TaskWithoutVariants(g.task_id(t).to_string()));
        }
    }
    let mut vertices = Vec::new();
    let mut task_offset = Vec::with_capacity(g.task_count());
    for (t, vs) in variants.iter().enumerate().take(g.task_count()) {
        task_offset.push(vertices.len());
        vertices.extend((0..vs.len()).map(|k| VertexId::new(t, k)));
    }
    let mut edges = Vec::new();
    for (p, c, _) in g.edges() {
        for k in 0..variants[p].len() {
            for k2 in 0..variants[c].len() {
                edges.push((VertexId::new(p, k), VertexId::new(c, k2)));
            }
        }
    }

    let mut paths = Vec::new();
    let mut prefix = Vec::new();
    enumerate_paths(g, variants, g.root(), &mut prefix, &mut paths);

    let mut paths_through = vec![Vec::new(); vertices.len()];
    for (i, p) in paths.iter().enumerate() {
        for v in &p.vertices {
            paths_through[task_offset[v.task] + v.variant].push(i);
        }
    }
    Ok(AugmentedGraph { vertices, task_offset, edges, paths, paths_through })
}

fn enumerate_paths(
    g: &PipelineGraph,
    variants: &[Vec<VariantProfile>],
    task: usize,
    prefix: &mut Vec<VertexId>,
    out: &mut Vec<Path>,
) {
    for k in 0..variants[task].len() {
        prefix.push(VertexId::new(task, k));
        if g.is_sink(task) {
            out.push(Path { vertices: prefix.clone() });
        } else {
            for &c in g.children(task) {
                enumerate_paths(g, variants, c, prefix, out);
            }
        }
        prefix.pop();
    }
}

// ---------------------------------------------------------------------------
// Pipeline bundle
// ---------------------------------------------------------------------------

/// Validated pipeline: tree, variant profiles, augmented graph and per-path
/// profiled accuracies. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    graph: PipelineGraph,
    variants: Vec<Vec<VariantProfile>>,
    augmented: AugmentedGraph,
    path_accuracy: Vec<f64>,
}

impl Pipeline {
    pub fn from_spec(spec: &PipelineSpec) -> Result<Self, ModelError> {
        let graph = build_pipeline(spec)?;
        let mut variants = Vec::with_capacity(graph.task_count());
        for t in 0..graph.task_count() {
            let ts = spec.tasks.iter().find(|ts| ts.id == graph.task_id(t)).expect("task present");
            let mut seen = BTreeSet::new();
            let mut vs = Vec::with_capacity(ts.variants.len());
            for v in &ts.variants {
                if !seen.insert(v.id.as_str()) {
                    return Err(ModelError::DuplicateId(format!("{}/{}", ts.id, v.id)));
                }
                vs.push(VariantProfile::from_spec(&ts.id, v)?);
            }
            variants.push(vs);
        }
        let augmented = build_augmented_graph(&graph, &variants)?;

        let mut path_accuracy: Vec<Option<f64>> = vec![None; augmented.paths().len()];
        for entry in &spec.path_accuracy {
            let invalid = |reason: &str| ModelError::InvalidPathAccuracy { path: entry.path.clone(), reason: reason.into() };
            if !(0.0..=1.0).contains(&entry.acc) {
                return Err(invalid("accuracy outside [0, 1]"));
            }
            let vertices = resolve_path(&graph, &variants, &entry.path).map_err(|r| invalid(&r))?;
            let idx = augmented.path_index(&vertices).ok_or_else(|| invalid("not a root-to-sink path"))?;
            if path_accuracy[idx].replace(entry.acc).is_some() {
                return Err(invalid("listed twice"));
            }
        }
        let mut acc = Vec::with_capacity(path_accuracy.len());
        for (i, a) in path_accuracy.into_iter().enumerate() {
            match a {
                Some(a) => acc.push(a),
                None => {
                    return Err(ModelError::MissingPathAccuracy(path_names(&variants, &augmented.paths()[i])))
                }
            }
        }
        let pipeline = Pipeline { graph, variants, augmented, path_accuracy: acc };
        pipeline.check_monotone()?;
        Ok(pipeline)
    }

    pub fn graph(&self) -> &PipelineGraph {
        &self.graph
    }

    pub fn augmented(&self) -> &AugmentedGraph {
        &self.augmented
    }

    pub fn paths(&self) -> &[Path] {
        self.augmented.paths()
    }

    pub fn variants(&self, task: usize) -> &[VariantProfile] {
        &self.variants[task]
    }

    pub fn profile(&self, v: VertexId) -> &VariantProfile {
        &self.variants[v.task][v.variant]
    }

    pub fn vertices(&self) -> &[VertexId] {
        self.augmented.vertices()
    }

    pub fn vertex_index(&self, v: VertexId) -> usize {
        self.augmented.vertex_index(v)
    }

    pub fn vertex_count(&self) -> usize {
        self.augmented.vertices().len()
    }

    /// Profiled end-to-end accuracy of path `p`.
    pub fn path_accuracy(&self, p: usize) -> f64 {
        self.path_accuracy[p]
    }

    /// Profiled multiplicative factor of every vertex, in vertex order.
    pub fn mult_factors(&self) -> Vec<f64> {
        self.vertices().iter().map(|&v| self.profile(v).mult_factor).collect()
    }

    /// Human-readable `task/variant` label.
    pub fn vertex_name(&self, v: VertexId) -> String {
        format!("{}/{}", self.graph.task_id(v.task), self.profile(v).id)
    }

    pub fn path_variant_ids(&self, p: usize) -> Vec<String> {
        path_names(&self.variants, &self.paths()[p])
    }

    /// Variants of `task` with maximal single-model accuracy.
    pub fn top_variants(&self, task: usize) -> Vec<usize> {
        let best = self.variants[task].iter().map(|v| v.accuracy).fold(f64::NEG_INFINITY, f64::max);
        (0..self.variants[task].len()).filter(|&k| self.variants[task][k].accuracy >= best).collect()
    }

    /// Requests arriving at `target` per request entering path `p`, using
    /// the profiled multiplicative factors.
    pub fn path_multiplier(&self, p: usize, target: VertexId) -> Result<f64, ModelError> {
        self.path_multiplier_with(&self.paths()[p], target, &self.mult_factors())
    }

    /// Product of `factor · branch ratio` over the strict predecessors of
    /// `target` on `path`; `factors` is indexed by vertex index.
    pub fn path_multiplier_with(&self, path: &Path, target: VertexId, factors: &[f64]) -> Result<f64, ModelError> {
        let pos = path.position(target).ok_or(ModelError::VertexNotOnPath)?;
        let mut m = 1.0;
        for j in 0..pos {
            let v = path.vertices[j];
            let next = path.vertices[j + 1];
            m *= factors[self.vertex_index(v)] * self.graph.branch_ratio(next.task);
        }
        Ok(m)
    }

    /// Sum of full-batch execution times (ms) along `path`.
    pub fn path_latency(&self, path: &Path, batch_choice: &BTreeMap<VertexId, u32>) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for &v in &path.vertices {
            let b = *batch_choice.get(&v).ok_or_else(|| ModelError::MissingBatchChoice(self.vertex_name(v)))?;
            total += self
                .profile(v)
                .batch_latency_ms(b)
                .ok_or_else(|| ModelError::BatchNotProfiled { vertex: self.vertex_name(v), batch: b })?;
        }
        Ok(total)
    }

    /// Pipeline consisting of `task` alone, each variant scored by its
    /// single-model accuracy.
    pub fn isolated_task(&self, task: usize) -> Pipeline {
        let graph = PipelineGraph {
            ids: vec![self.graph.task_id(task).to_string()],
            parent: vec![None],
            in_ratio: vec![1.0],
            children: vec![Vec::new()],
        };
        let variants = vec![self.variants[task].clone()];
        let augmented = build_augmented_graph(&graph, &variants).expect("task has variants");
        let path_accuracy = variants[0].iter().map(|v| v.accuracy).collect();
        Pipeline { graph, variants, augmented, path_accuracy }
    }

    fn check_monotone(&self) -> Result<(), ModelError> {
        for (i, p) in self.paths().iter().enumerate() {
            for (pos, &v) in p.vertices.iter().enumerate() {
                let acc = self.profile(v).accuracy;
                for k in 0..self.variants[v.task].len() {
                    if self.variants[v.task][k].accuracy <= acc {
                        continue;
                    }
                    let mut better = p.vertices.clone();
                    better[pos] = VertexId::new(v.task, k);
                    let j = self.augmented.path_index(&better).expect("substituted path exists");
                    if self.path_accuracy[j] + MONOTONE_TOL < self.path_accuracy[i] {
                        return Err(ModelError::NonMonotoneAccuracy {
                            worse: self.path_variant_ids(j),
                            worse_acc: self.path_accuracy[j],
                            better: self.path_variant_ids(i),
                            better_acc: self.path_accuracy[i],
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn path_names(variants: &[Vec<VariantProfile>], p: &Path) -> Vec<String> {
    p.vertices.iter().map(|v| variants[v.task][v.variant].id.clone()).collect()
}

fn resolve_path(g: &PipelineGraph, variants: &[Vec<VariantProfile>], ids: &[String]) -> Result<Vec<VertexId>, String> {
    let Some((first, rest)) = ids.split_first() else {
        return Err("empty path".into());
    };
    let root = g.root();
    let k = variants[root].iter().position(|v| &v.id == first).ok_or_else(|| format!("`{first}` is not a root variant"))?;
    let mut out = vec![VertexId::new(root, k)];
    let mut cur = root;
    for id in rest {
        let matches: Vec<VertexId> = g
            .children(cur)
            .iter()
            .filter_map(|&c| variants[c].iter().position(|v| &v.id == id).map(|k| VertexId::new(c, k)))
            .collect();
        match matches.as_slice() {
            [v] => {
                out.push(*v);
                cur = v.task;
            }
            [] => return Err(format!("`{id}` is not a variant of a child task")),
            _ => return Err(format!("`{id}` is ambiguous between child tasks")),
        }
    }
    if !g.is_sink(cur) {
        return Err("path does not end at a sink".into());
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn variant(id: &str, acc: f64, r: f64, q: &[(u32, f64)]) -> VariantSpec {
        VariantSpec {
            id: id.into(),
            accuracy: acc,
            mult_factor: r,
            throughput: q.iter().map(|&(b, q)| (format!("{b}"), q)).collect(),
        }
    }

    /// The two-task chain used throughout the tests.
    pub(crate) fn tiny1_spec() -> PipelineSpec {
        PipelineSpec {
            tasks: vec![
                TaskSpec {
                    id: "A".into(),
                    variants: vec![
                        variant("a1", 1.0, 2.0, &[(1, 10.0), (4, 20.0)]),
                        variant("a2", 0.8, 1.0, &[(1, 40.0), (4, 80.0)]),
                    ],
                },
                TaskSpec {
                    id: "B".into(),
                    variants: vec![
                        variant("b1", 1.0, 1.0, &[(1, 20.0), (4, 40.0)]),
                        variant("b2", 0.7, 1.0, &[(1, 100.0), (4, 200.0)]),
                    ],
                },
            ],
            edges: vec![EdgeSpec { from: "A".into(), to: "B".into(), branch_ratio: 1.0 }],
            path_accuracy: [("a1", "b1", 1.0), ("a1", "b2", 0.75), ("a2", "b1", 0.78), ("a2", "b2", 0.60)]
                .iter()
                .map(|&(a, b, acc)| PathAccuracySpec { path: vec![a.into(), b.into()], acc })
                .collect(),
        }
    }

    pub(crate) fn tiny1() -> Pipeline {
        Pipeline::from_spec(&tiny1_spec()).unwrap()
    }

    fn tree_spec() -> PipelineSpec {
        PipelineSpec {
            tasks: vec![
                TaskSpec {
                    id: "A".into(),
                    variants: vec![variant("a1", 1.0, 2.0, &[(1, 10.0)]), variant("a2", 0.9, 1.0, &[(1, 20.0)])],
                },
                TaskSpec {
                    id: "B".into(),
                    variants: vec![variant("b1", 1.0, 1.0, &[(1, 10.0)]), variant("b2", 0.5, 1.0, &[(1, 20.0)])],
                },
                TaskSpec {
                    id: "C".into(),
                    variants: vec![
                        variant("c1", 1.0, 1.0, &[(1, 10.0)]),
                        variant("c2", 0.8, 1.0, &[(1, 20.0)]),
                        variant("c3", 0.6, 1.0, &[(1, 30.0)]),
                    ],
                },
            ],
            edges: vec![
                EdgeSpec { from: "A".into(), to: "B".into(), branch_ratio: 0.6 },
                EdgeSpec { from: "A".into(), to: "C".into(), branch_ratio: 0.8 },
            ],
            path_accuracy: Vec::new(),
        }
    }

    #[test]
    fn tiny1_is_a_two_task_chain() {
        let g = build_pipeline(&tiny1_spec()).unwrap();
        assert_eq!(g.task_count(), 2);
        assert_eq!(g.task_id(g.root()), "A");
        assert_eq!(g.edges(), vec![(0, 1, 1.0)]);
        assert_eq!(g.sinks(), vec![1]);
    }

    #[test]
    fn back_edge_is_rejected() {
        let mut spec = tiny1_spec();
        spec.edges.push(EdgeSpec { from: "B".into(), to: "A".into(), branch_ratio: 1.0 });
        assert!(matches!(build_pipeline(&spec), Err(ModelError::NotATree(_))));
    }

    #[test]
    fn multi_parent_and_bad_refs() {
        let mut spec = tree_spec();
        spec.edges.push(EdgeSpec { from: "B".into(), to: "C".into(), branch_ratio: 1.0 });
        assert!(matches!(build_pipeline(&spec), Err(ModelError::NotATree(_))));

        let mut spec = tree_spec();
        spec.edges[0].to = "Z".into();
        assert_eq!(build_pipeline(&spec), Err(ModelError::UnknownTaskRef("Z".into())));

        let mut spec = tree_spec();
        spec.edges[1].branch_ratio = 0.0;
        assert!(matches!(build_pipeline(&spec), Err(ModelError::BranchRatioOutOfRange { .. })));
        spec.edges[1].branch_ratio = 1.5;
        assert!(matches!(build_pipeline(&spec), Err(ModelError::BranchRatioOutOfRange { .. })));

        let mut spec = tree_spec();
        spec.edges.pop();
        assert!(matches!(build_pipeline(&spec), Err(ModelError::NotATree(_))));
    }

    #[test]
    fn fan_out_tree() {
        let g = build_pipeline(&tree_spec()).unwrap();
        assert_eq!(g.sinks(), vec![1, 2]);
        assert_eq!(g.branch_ratio(1), 0.6);
        assert_eq!(g.branch_ratio(2), 0.8);
        assert_eq!(g.children(0), &[1, 2]);
    }

    #[test]
    fn topological_order_follows_declaration_on_ties() {
        let mut spec = tree_spec();
        spec.tasks.rotate_left(1); // B, C, A
        let g = build_pipeline(&spec).unwrap();
        assert_eq!(g.task_id(0), "A");
        assert_eq!(g.task_id(1), "B");
        assert_eq!(g.task_id(2), "C");
    }

    #[test]
    fn augmented_graph_counts() {
        let p = tiny1();
        assert_eq!(p.vertices().len(), 4);
        assert_eq!(p.augmented().edges().len(), 4);
        assert_eq!(p.paths().len(), 4);

        let spec = PipelineSpec {
            tasks: vec![TaskSpec {
                id: "only".into(),
                variants: (0..3).map(|i| variant(&format!("v{i}"), 1.0 - 0.1 * i as f64, 1.0, &[(1, 10.0)])).collect(),
            }],
            edges: vec![],
            path_accuracy: (0..3)
                .map(|i| PathAccuracySpec { path: vec![format!("v{i}")], acc: 1.0 - 0.1 * i as f64 })
                .collect(),
        };
        let p = Pipeline::from_spec(&spec).unwrap();
        assert_eq!((p.vertices().len(), p.augmented().edges().len(), p.paths().len()), (3, 0, 3));

        let g = build_pipeline(&tree_spec()).unwrap();
        let vs: Vec<Vec<VariantProfile>> = tree_spec()
            .tasks
            .iter()
            .map(|t| t.variants.iter().map(|v| VariantProfile::from_spec(&t.id, v).unwrap()).collect())
            .collect();
        let ag = build_augmented_graph(&g, &vs).unwrap();
        assert_eq!(ag.paths().len(), 10);
    }

    #[test]
    fn task_without_variants() {
        let mut spec = tiny1_spec();
        spec.tasks[1].variants.clear();
        spec.path_accuracy.clear();
        assert_eq!(Pipeline::from_spec(&spec), Err(ModelError::TaskWithoutVariants("B".into())));
    }

    #[test]
    fn path_order_is_lexicographic() {
        let p = tiny1();
        let names: Vec<Vec<String>> = (0..4).map(|i| p.path_variant_ids(i)).collect();
        assert_eq!(names, vec![vec!["a1", "b1"], vec!["a1", "b2"], vec!["a2", "b1"], vec!["a2", "b2"]]);
    }

    #[test]
    fn multipliers() {
        let p = tiny1();
        // path 0 = (a1, b1)
        assert_eq!(p.path_multiplier(0, VertexId::new(0, 0)).unwrap(), 1.0);
        assert_eq!(p.path_multiplier(0, VertexId::new(1, 0)).unwrap(), 2.0);
        assert_eq!(p.path_multiplier(0, VertexId::new(1, 1)), Err(ModelError::VertexNotOnPath));

        let spec = PipelineSpec {
            tasks: vec![
                TaskSpec { id: "A".into(), variants: vec![variant("a", 1.0, 2.0, &[(1, 1.0)])] },
                TaskSpec { id: "B".into(), variants: vec![variant("b", 1.0, 1.5, &[(1, 1.0)])] },
                TaskSpec { id: "C".into(), variants: vec![variant("c", 1.0, 1.0, &[(1, 1.0)])] },
            ],
            edges: vec![
                EdgeSpec { from: "A".into(), to: "B".into(), branch_ratio: 1.0 },
                EdgeSpec { from: "B".into(), to: "C".into(), branch_ratio: 1.0 },
            ],
            path_accuracy: vec![PathAccuracySpec { path: vec!["a".into(), "b".into(), "c".into()], acc: 1.0 }],
        };
        let p = Pipeline::from_spec(&spec).unwrap();
        assert_eq!(p.path_multiplier(0, VertexId::new(2, 0)).unwrap(), 3.0);
    }

    #[test]
    fn latencies() {
        let p = tiny1();
        let mut batches = BTreeMap::new();
        batches.insert(VertexId::new(0, 0), 4);
        batches.insert(VertexId::new(1, 0), 4);
        assert_eq!(p.path_latency(&p.paths()[0], &batches).unwrap(), 300.0);

        let mut batches = BTreeMap::new();
        batches.insert(VertexId::new(0, 1), 1);
        batches.insert(VertexId::new(1, 1), 1);
        assert_eq!(p.path_latency(&p.paths()[3], &batches).unwrap(), 35.0);

        batches.insert(VertexId::new(1, 1), 2);
        assert!(matches!(p.path_latency(&p.paths()[3], &batches), Err(ModelError::BatchNotProfiled { batch: 2, .. })));
        batches.remove(&VertexId::new(0, 1));
        assert!(matches!(p.path_latency(&p.paths()[3], &batches), Err(ModelError::MissingBatchChoice(_))));
    }

    #[test]
    fn non_monotone_accuracy_is_rejected() {
        let mut spec = tiny1_spec();
        // (a2, b1) above (a1, b1) although a1 is the more accurate detector.
        spec.path_accuracy[2].acc = 1.0;
        spec.path_accuracy[0].acc = 0.9;
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::NonMonotoneAccuracy { .. })));
    }

    #[test]
    fn missing_or_bad_path_accuracy() {
        let mut spec = tiny1_spec();
        spec.path_accuracy.pop();
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::MissingPathAccuracy(_))));

        let mut spec = tiny1_spec();
        spec.path_accuracy[0].path = vec!["a1".into()];
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::InvalidPathAccuracy { .. })));
    }

    #[test]
    fn profile_validation() {
        let mut spec = tiny1_spec();
        spec.tasks[0].variants[0].throughput.insert("8".into(), 15.0);
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::InvalidProfile { .. })));

        let mut spec = tiny1_spec();
        // throughput grows faster than batch size: latency would shrink
        spec.tasks[0].variants[0].throughput.insert("4".into(), 50.0);
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::InvalidProfile { .. })));

        let mut spec = tiny1_spec();
        spec.tasks[0].variants[0].throughput.insert("x".into(), 50.0);
        assert!(matches!(Pipeline::from_spec(&spec), Err(ModelError::InvalidProfile { .. })));
    }
}
