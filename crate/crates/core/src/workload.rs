//! Arrival processes.
//!
//! Every process is materialized as a sorted list of root-request arrival
//! times plus a horizon. Aggregate traces (`second,count` rows) are expanded
//! deterministically by spreading each second's arrivals uniformly at
//! `(i + 0.5) / count` of the second; timestamp traces are used verbatim.
//! Synthetic processes are generated from a seed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::math::{ceil, floor};

/// Where an arrival process came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    TraceAggregate,
    TraceTimestamps,
    Poisson,
    Ramp,
    Step,
}

/// Root-request arrival times over `[0, horizon_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    /// Sorted, nonnegative arrival times.
    pub arrivals_ms: Vec<f64>,
    pub horizon_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamps must be nondecreasing")]
    NonMonotonicTimestamps { line: usize },
    #[error("trace has no arrivals to scale")]
    ZeroPeak,
    #[error("bad parameters: {0}")]
    BadParams(String),
}

/// Synthetic arrival process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    /// Homogeneous Poisson arrivals.
    Poisson { rate_qps: f64, duration_s: f64 },
    /// Poisson arrivals whose rate moves linearly from `start_qps` to
    /// `end_qps` over the duration.
    Ramp { start_qps: f64, end_qps: f64, duration_s: f64 },
    /// Piecewise-constant deterministic rate: each level lasts
    /// `level_duration_s` and is expanded like an aggregate trace.
    Step { levels: Vec<f64>, level_duration_s: f64 },
}

impl ArrivalProcess {
    /// Expands per-second counts (index = second).
    pub fn from_counts(counts: &[u64]) -> Self {
        let mut arrivals = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
        for (second, &count) in counts.iter().enumerate() {
            let base = second as f64 * 1000.0;
            for j in 0..count {
                arrivals.push(base + (j as f64 + 0.5) * 1000.0 / count as f64);
            }
        }
        ArrivalProcess {
            kind: ArrivalKind::TraceAggregate,
            arrivals_ms: arrivals,
            horizon_ms: counts.len() as f64 * 1000.0,
        }
    }

    /// Expands `(second, count)` rows. Seconds must be strictly increasing;
    /// missing seconds have no arrivals. `line_of` maps a row index to the
    /// line number reported in errors.
    pub fn from_aggregate_rows(rows: &[(u64, u64)], line_of: impl Fn(usize) -> usize) -> Result<Self, WorkloadError> {
        let mut counts: Vec<u64> = Vec::new();
        for (i, &(second, count)) in rows.iter().enumerate() {
            if (second as usize) < counts.len() {
                return Err(WorkloadError::Parse {
                    line: line_of(i),
                    message: alloc::format!("second {second} is not after the previous row"),
                });
            }
            counts.resize(second as usize, 0);
            counts.push(count);
        }
        Ok(Self::from_counts(&counts))
    }

    /// Uses timestamps verbatim. The horizon ends at the first whole second
    /// after the last arrival.
    pub fn from_timestamps(timestamps: Vec<f64>, line_of: impl Fn(usize) -> usize) -> Result<Self, WorkloadError> {
        for (i, &t) in timestamps.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(WorkloadError::Parse {
                    line: line_of(i),
                    message: alloc::format!("timestamp {t} must be a nonnegative number"),
                });
            }
            if i > 0 && t < timestamps[i - 1] {
                return Err(WorkloadError::NonMonotonicTimestamps { line: line_of(i) });
            }
        }
        let horizon_ms = timestamps.last().map_or(0.0, |&t| (floor(t / 1000.0) + 1.0) * 1000.0);
        Ok(ArrivalProcess { kind: ArrivalKind::TraceTimestamps, arrivals_ms: timestamps, horizon_ms })
    }

    /// Number of whole or partial seconds covered by the horizon.
    pub fn seconds(&self) -> usize {
        ceil(self.horizon_ms / 1000.0) as usize
    }

    /// Arrivals per second of the horizon.
    pub fn aggregate_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.seconds()];
        for &t in &self.arrivals_ms {
            let s = floor(t / 1000.0) as usize;
            if s < counts.len() {
                counts[s] += 1;
            }
        }
        counts
    }

    /// Largest per-second arrival count.
    pub fn peak_qps(&self) -> u64 {
        self.aggregate_counts().into_iter().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.arrivals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals_ms.is_empty()
    }
}

/// Rescales the per-second rates so the peak second has `target_peak_qps`
/// arrivals, re-discretizing the counts by largest remainder. The result is
/// an aggregate expansion.
pub fn scale_trace(p: &ArrivalProcess, target_peak_qps: f64) -> Result<ArrivalProcess, WorkloadError> {
    if !(target_peak_qps.is_finite() && target_peak_qps >= 0.0) {
        return Err(WorkloadError::BadParams(alloc::format!("target peak {target_peak_qps} must be nonnegative")));
    }
    let counts = p.aggregate_counts();
    let peak = counts.iter().copied().max().unwrap_or(0);
    if peak == 0 {
        return Err(WorkloadError::ZeroPeak);
    }
    let factor = target_peak_qps / peak as f64;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * factor).collect();
    Ok(ArrivalProcess { horizon_ms: p.horizon_ms, ..ArrivalProcess::from_counts(&largest_remainder(&exact)) })
}

/// Rounds nonnegative values to integers whose total is the rounded total,
/// handing the leftover units to the largest fractional parts (ties to the
/// earlier index).
fn largest_remainder(exact: &[f64]) -> Vec<u64> {
    let mut out: Vec<u64> = exact.iter().map(|&e| floor(e + 1e-9) as u64).collect();
    let total = crate::math::round(exact.iter().sum::<f64>()) as u64;
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    let frac = |i: usize| exact[i] - out[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Generates a synthetic process; identical seeds give identical arrivals.
pub fn synth(spec: &SynthSpec, seed: u64) -> Result<ArrivalProcess, WorkloadError> {
    let bad = |m: &str| Err(WorkloadError::BadParams(m.into()));
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        SynthSpec::Poisson { rate_qps, duration_s } => {
            if !ok(rate_qps) || !ok(duration_s) {
                return bad("rate and duration must be nonnegative");
            }
            let horizon_ms = duration_s * 1000.0;
            let mut arrivals = Vec::new();
            if rate_qps > 0.0 {
                let gap = Exp::new(rate_qps / 1000.0).expect("positive rate");
                let mut t = gap.sample(&mut rng);
                while t < horizon_ms {
                    arrivals.push(t);
                    t += gap.sample(&mut rng);
                }
            }
            Ok(ArrivalProcess { kind: ArrivalKind::Poisson, arrivals_ms: arrivals, horizon_ms })
        }
        SynthSpec::Ramp { start_qps, end_qps, duration_s } => {
            if !ok(start_qps) || !ok(end_qps) || !ok(duration_s) {
                return bad("rates and duration must be nonnegative");
            }
            // Thinning of a homogeneous process at the larger rate.
            let horizon_ms = duration_s * 1000.0;
            let top = start_qps.max(end_qps);
            let mut arrivals = Vec::new();
            if top > 0.0 && horizon_ms > 0.0 {
                let gap = Exp::new(top / 1000.0).expect("positive rate");
                let mut t = gap.sample(&mut rng);
                while t < horizon_ms {
                    let rate = start_qps + (end_qps - start_qps) * t / horizon_ms;
                    if rng.random::<f64>() * top < rate {
                        arrivals.push(t);
                    }
                    t += gap.sample(&mut rng);
                }
            }
            Ok(ArrivalProcess { kind: ArrivalKind::Ramp, arrivals_ms: arrivals, horizon_ms })
        }
        SynthSpec::Step { ref levels, level_duration_s } => {
            if levels.iter().any(|&l| !ok(l)) || !ok(level_duration_s) {
                return bad("levels and level duration must be nonnegative");
            }
            if fract_nonzero(level_duration_s) {
                return bad("level duration must be a whole number of seconds");
            }
            // Cumulative rounding keeps fractional rates exact on average.
            let mut counts = Vec::new();
            let mut cumulative = 0.0;
            for &level in levels {
                for _ in 0..level_duration_s as usize {
                    let before = floor(cumulative + 1e-9);
                    cumulative += level;
                    counts.push((floor(cumulative + 1e-9) - before) as u64);
                }
            }
            Ok(ArrivalProcess { kind: ArrivalKind::Step, ..ArrivalProcess::from_counts(&counts) })
        }
    }
}

fn fract_nonzero(x: f64) -> bool {
    crate::math::fract(x) != 0.0
}
