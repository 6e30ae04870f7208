use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Family, Micros, TaskId, TaskSpec, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("a workload needs at least one task")]
    NoTasks,
    #[error("invalid duration distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
}

/// Log-normal task durations given by their median and log-space sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationDist {
    pub median: Micros,
    pub sigma: f64,
}

impl Default for DurationDist {
    fn default() -> Self {
        DurationDist {
            median: 20_000,
            sigma: 0.8,
        }
    }
}

impl DurationDist {
    fn sampler(&self) -> Result<LogNormal<f64>, GenError> {
        if self.median == 0 {
            return Err(GenError::InvalidDistribution("median must be positive".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(GenError::InvalidDistribution(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        LogNormal::new((self.median as f64).ln(), self.sigma)
            .map_err(|e| GenError::InvalidDistribution(e.to_string()))
    }
}

const BATCH_CORES: u32 = 8;

/// `n_short` tasks of `short_work` followed by `n_long` tasks of `long_work`,
/// all arriving at 0 on 8 cores with truthful hints. Ids follow list order,
/// so arrival order puts the long tasks last.
pub fn gen_longtail_batch(
    n_short: u32,
    short_work: Micros,
    n_long: u32,
    long_work: Micros,
) -> Result<WorkloadSpec, GenError> {
    if n_short + n_long == 0 {
        return Err(GenError::NoTasks);
    }
    if (n_short > 0 && short_work == 0) || (n_long > 0 && long_work == 0) {
        return Err(GenError::InvalidParameter("task work must be positive".into()));
    }
    let tasks = (0..n_short)
        .map(|i| TaskSpec::new(i, 0, short_work))
        .chain((0..n_long).map(|i| TaskSpec::new(n_short + i, 0, long_work)))
        .collect();
    Ok(WorkloadSpec {
        name: format!("longtail-{n_short}x{short_work}-{n_long}x{long_work}"),
        family: Family::BatchLongtail,
        tasks,
        core_count: BATCH_CORES,
        seed: 0,
        horizon: None,
    })
}

/// Layer sizes from the final task downward: 1, f, f², ... with the last
/// layer truncated so the sizes sum to `n`. `fan_in` 0 yields one flat layer.
pub fn build_dag_layer_sizes(n: usize, fan_in: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if fan_in == 0 {
        return vec![n];
    }
    let mut sizes = Vec::new();
    let (mut left, mut next) = (n, 1usize);
    while left > 0 {
        let s = next.min(left);
        sizes.push(s);
        left -= s;
        next = next.saturating_mul(fan_in);
    }
    sizes
}

/// A compile/link shaped DAG: task 0 is the final link step, and each task
/// in layer k+1 is a dependency of task `i mod |layer k|` of layer k, so
/// every non-leaf task waits on about `fan_in` tasks below it.
pub fn gen_build_dag(
    n_tasks: usize,
    fan_in: usize,
    dur: DurationDist,
    seed: u64,
) -> Result<WorkloadSpec, GenError> {
    if n_tasks == 0 {
        return Err(GenError::NoTasks);
    }
    let sampler = dur.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = build_dag_layer_sizes(n_tasks, fan_in);

    let mut tasks: Vec<TaskSpec> = (0..n_tasks)
        .map(|i| {
            let work = (sampler.sample(&mut rng).round() as Micros).max(1);
            TaskSpec::new(i as u32, 0, work)
        })
        .collect();
    let mut start = 0;
    for w in sizes.windows(2) {
        let (upper, lower) = (w[0], w[1]);
        let lower_start = start + upper;
        for i in 0..lower {
            let parent = start + i % upper;
            tasks[parent].deps.insert(TaskId((lower_start + i) as u32));
        }
        start = lower_start;
    }
    Ok(WorkloadSpec {
        name: format!("build-dag-{n_tasks}-f{fan_in}-s{seed}"),
        family: Family::BuildDag,
        tasks,
        core_count: BATCH_CORES,
        seed,
        horizon: None,
    })
}

/// Shape knobs for [`gen_latency_chain_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyChainParams {
    pub requests_per_worker: u32,
    pub core_count: u32,
    /// Chance that one request needs `long_request_factor` times the work.
    /// Off by default so chains stay strictly periodic.
    pub long_request_prob: f64,
    pub long_request_factor: u32,
}

impl Default for LatencyChainParams {
    fn default() -> Self {
        LatencyChainParams {
            requests_per_worker: 50,
            core_count: 2,
            long_request_prob: 0.0,
            long_request_factor: 20,
        }
    }
}

/// Periodic request chains with default shape knobs.
pub fn gen_latency_chain(
    n_workers: u32,
    wake_period: Micros,
    work_per_wake: Micros,
    seed: u64,
) -> Result<WorkloadSpec, GenError> {
    gen_latency_chain_with(n_workers, wake_period, work_per_wake, seed, LatencyChainParams::default())
}

/// Each worker issues one request per `wake_period` from a random phase.
/// A request becomes runnable at its arrival or when the previous request of
/// the same worker finishes, whichever is later; that moment is its wakeup.
pub fn gen_latency_chain_with(
    n_workers: u32,
    wake_period: Micros,
    work_per_wake: Micros,
    seed: u64,
    params: LatencyChainParams,
) -> Result<WorkloadSpec, GenError> {
    if n_workers == 0 || params.requests_per_worker == 0 {
        return Err(GenError::NoTasks);
    }
    if wake_period == 0 || work_per_wake == 0 || params.core_count == 0 {
        return Err(GenError::InvalidParameter(
            "wake_period, work_per_wake and core_count must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&params.long_request_prob) || params.long_request_factor == 0 {
        return Err(GenError::InvalidParameter("long request knobs out of range".into()));
    }
    let per = params.requests_per_worker;
    let mut tasks = Vec::with_capacity((n_workers * per) as usize);
    for w in 0..n_workers {
        // one stream per worker keeps a worker's requests stable as n_workers grows
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(w) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let phase = rng.random_range(0..wake_period);
        for k in 0..per {
            let id = w * per + k;
            let long = rng.random_bool(params.long_request_prob);
            let work = if long {
                work_per_wake * Micros::from(params.long_request_factor)
            } else {
                work_per_wake
            };
            let mut t = TaskSpec::new(id, phase + Micros::from(k) * wake_period, work);
            if k + 1 < per {
                t.wake_targets.push(TaskId(id + 1));
            }
            tasks.push(t);
        }
    }
    Ok(WorkloadSpec {
        name: format!("latency-chain-{n_workers}w-{wake_period}us-s{seed}"),
        family: Family::LatencyChain,
        tasks,
        core_count: params.core_count,
        seed,
        horizon: None,
    })
}
