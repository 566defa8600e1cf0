//! Experiment files: everything a run needs, checked into the repository.

use std::path::{Path, PathBuf};

use pipescale_core::sim::RuntimeParams;
use pipescale_core::workload::{scale_trace, synth, ArrivalProcess, SynthSpec};
use pipescale_core::{ClusterConfig, DropPolicy, Pipeline, PolicyMode, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{load_cluster, load_pipeline, load_trace, read_json, IoError, TraceFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub path: PathBuf,
    pub format: TraceFormat,
    /// Rescale so the busiest second carries this many arrivals.
    #[serde(default)]
    pub scale_to_peak_qps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    Trace(TraceSource),
    Synthetic(SynthSpec),
}

fn default_drop_policy() -> DropPolicy {
    DropPolicy::OpportunisticRerouting
}

fn default_policy_mode() -> PolicyMode {
    PolicyMode::PipelineAware
}

/// An experiment file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: PathBuf,
    pub cluster: PathBuf,
    pub workload: WorkloadSource,
    #[serde(default = "default_policy_mode")]
    pub policy_mode: PolicyMode,
    #[serde(default = "default_drop_policy")]
    pub drop_policy: DropPolicy,
    pub seed: u64,
    /// Simulated seconds; defaults to the workload's length. Arrivals past
    /// the horizon are discarded.
    #[serde(default)]
    pub horizon_s: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub runtime: RuntimeParams,
}

/// A loaded experiment with its inputs resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub pipeline: Pipeline,
    pub cluster: ClusterConfig,
    pub arrivals: ArrivalProcess,
    digest: String,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let config: ExperimentConfig = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(config, base_dir)
    }

    pub fn from_config(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self, IoError> {
        let resolve = |p: &Path| base_dir.join(p);
        let pipeline = load_pipeline(&resolve(&config.pipeline))?;
        let cluster = load_cluster(&resolve(&config.cluster))?;
        let mut arrivals = match &config.workload {
            WorkloadSource::Trace(t) => {
                let path = resolve(&t.path);
                let raw = load_trace(&path, t.format)?;
                match t.scale_to_peak_qps {
                    Some(peak) => scale_trace(&raw, peak).map_err(|source| IoError::Trace { path, source })?,
                    None => raw,
                }
            }
            WorkloadSource::Synthetic(spec) => synth(spec, config.seed)
                .map_err(|source| IoError::Trace { path: PathBuf::from("<synthetic workload>"), source })?,
        };
        if let Some(h) = config.horizon_s {
            if !(h.is_finite() && h >= 0.0) {
                return Err(IoError::Invalid { path: "horizon_s".into(), message: format!("{h} is not a nonnegative number") });
            }
            arrivals.horizon_ms = h * 1000.0;
            arrivals.arrivals_ms.retain(|&t| t < arrivals.horizon_ms);
        }
        let digest = digest_of(&config, &pipeline, &cluster, &arrivals);
        Ok(Experiment { config, base_dir, pipeline, cluster, arrivals, digest })
    }

    /// SHA-256 over the resolved inputs: the experiment fields, the parsed
    /// pipeline and cluster, and the arrival times.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            pipeline: self.pipeline.clone(),
            cluster: self.cluster.clone(),
            arrivals: self.arrivals.clone(),
            seed: self.config.seed,
            policy_mode: self.config.policy_mode,
            drop_policy: self.config.drop_policy,
            runtime: self.config.runtime.clone(),
        }
    }

    /// The output directory named in the file, resolved.
    pub fn output_dir(&self) -> Option<PathBuf> {
        self.config.output_dir.as_ref().map(|p| self.base_dir.join(p))
    }
}

fn digest_of(config: &ExperimentConfig, pipeline: &Pipeline, cluster: &ClusterConfig, arrivals: &ArrivalProcess) -> String {
    let mut h = Sha256::new();
    let mut part = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    // Paths are excluded so that moving a checked-in experiment does not
    // change its identity; the resolved contents are hashed instead.
    let mut fields = config.clone();
    fields.pipeline = PathBuf::new();
    fields.cluster = PathBuf::new();
    fields.output_dir = None;
    if let WorkloadSource::Trace(t) = &mut fields.workload {
        t.path = PathBuf::new();
    }
    part(&serde_json::to_vec(&fields).expect("experiment fields serialize"));
    part(format!("{pipeline:?}").as_bytes());
    part(&serde_json::to_vec(cluster).expect("cluster config serializes"));
    for t in &arrivals.arrivals_ms {
        h.update(t.to_bits().to_le_bytes());
    }
    h.update(arrivals.horizon_ms.to_bits().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
