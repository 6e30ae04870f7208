//! Shared domain types: workloads, per-task runtime state, metrics and the
//! canonical JSON form used for hashing and signing.

mod canonical;
mod metrics;

pub use canonical::{canonical_hash, to_canonical_string};
pub use metrics::{
    compute_delta, compute_metrics, CompletionTrace, MetricsError, MetricsReport,
    PerformanceDelta, TaskCompletion,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in microseconds.
pub type Micros = u64;

pub const MICROS_PER_SEC: u64 = 1_000_000;

pub const MIN_WEIGHT: u32 = 1;
pub const MAX_WEIGHT: u32 = 10_000;
/// Weight of a nice-0 task; vruntime advances at wall-clock rate at this weight.
pub const NICE_0_WEIGHT: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BuildDag,
    LatencyChain,
    BatchLongtail,
    Custom,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::BuildDag,
        Family::LatencyChain,
        Family::BatchLongtail,
        Family::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::BuildDag => "build-dag",
            Family::LatencyChain => "latency-chain",
            Family::BatchLongtail => "batch-longtail",
            Family::Custom => "custom",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown workload family `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub arrival_time: Micros,
    pub total_work: Micros,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_runtime_hint: Option<Micros>,
    pub weight: u32,
    #[serde(default)]
    pub deps: BTreeSet<TaskId>,
    #[serde(default)]
    pub wake_targets: Vec<TaskId>,
}

impl TaskSpec {
    /// A nice-0 task with no dependencies and a truthful runtime hint.
    pub fn new(id: u32, arrival_time: Micros, total_work: Micros) -> Self {
        TaskSpec {
            id: TaskId(id),
            arrival_time,
            total_work,
            expected_runtime_hint: Some(total_work),
            weight: NICE_0_WEIGHT,
            deps: BTreeSet::new(),
            wake_targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub family: Family,
    pub tasks: Vec<TaskSpec>,
    pub core_count: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("workload has no tasks")]
    Empty,
    #[error("core_count must be at least 1")]
    NoCores,
    #[error("duplicate task id {0}")]
    DuplicateTaskId(TaskId),
    #[error("task {0} has zero total_work")]
    ZeroWork(TaskId),
    #[error("task {0} weight {1} outside [1, 10000]")]
    WeightOutOfRange(TaskId, u32),
    #[error("task {0} references unknown task {1}")]
    UnknownTask(TaskId, TaskId),
    #[error("task {0} depends on itself")]
    SelfDependency(TaskId),
    #[error("dependency graph has a cycle through task {0}")]
    Cycle(TaskId),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.dependency_graph().map(|_| ())
    }

    pub fn canonical_hash(&self) -> String {
        canonical_hash(self)
    }

    /// Index-based dependency graph after validation. A task's effective
    /// dependencies are its own `deps` plus every task that lists it in
    /// `wake_targets`.
    pub fn dependency_graph(&self) -> Result<DependencyGraph, WorkloadError> {
        if self.tasks.is_empty() {
            return Err(WorkloadError::Empty);
        }
        if self.core_count == 0 {
            return Err(WorkloadError::NoCores);
        }
        let mut index = HashMap::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            if index.insert(t.id, i).is_some() {
                return Err(WorkloadError::DuplicateTaskId(t.id));
            }
            if t.total_work == 0 {
                return Err(WorkloadError::ZeroWork(t.id));
            }
            if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&t.weight) {
                return Err(WorkloadError::WeightOutOfRange(t.id, t.weight));
            }
        }

        let n = self.tasks.len();
        let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        // dependents in wake order: explicit wake_targets first, then the rest by id
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, t) in self.tasks.iter().enumerate() {
            for d in &t.deps {
                if *d == t.id {
                    return Err(WorkloadError::SelfDependency(t.id));
                }
                let j = *index.get(d).ok_or(WorkloadError::UnknownTask(t.id, *d))?;
                deps[i].insert(j);
            }
            for w in &t.wake_targets {
                if *w == t.id {
                    return Err(WorkloadError::SelfDependency(t.id));
                }
                let j = *index.get(w).ok_or(WorkloadError::UnknownTask(t.id, *w))?;
                deps[j].insert(i);
                if !dependents[i].contains(&j) {
                    dependents[i].push(j);
                }
            }
        }
        let mut rest: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, ds) in deps.iter().enumerate() {
            for &i in ds {
                if !dependents[i].contains(&j) {
                    rest[i].push(j);
                }
            }
        }
        for (i, mut extra) in rest.into_iter().enumerate() {
            extra.sort_by_key(|&j| self.tasks[j].id);
            dependents[i].extend(extra);
        }

        // Kahn's algorithm; anything left over sits on a cycle.
        let mut indegree: Vec<usize> = deps.iter().map(BTreeSet::len).collect();
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &j in &dependents[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(WorkloadError::Cycle(self.tasks[stuck].id));
        }

        Ok(DependencyGraph {
            deps,
            dependents,
            topo_order: order,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DependencyGraph {
    pub deps: Vec<BTreeSet<usize>>,
    pub dependents: Vec<Vec<usize>>,
    pub topo_order: Vec<usize>,
}

impl DependencyGraph {
    /// Longest chain length counted in tasks (a graph without edges has depth 1).
    pub fn depth(&self) -> usize {
        let mut level = vec![1usize; self.deps.len()];
        for &i in &self.topo_order {
            for &j in &self.dependents[i] {
                level[j] = level[j].max(level[i] + 1);
            }
        }
        level.into_iter().max().unwrap_or(0)
    }

    /// Size of the widest level when tasks are layered by longest path from a root.
    pub fn width(&self) -> usize {
        let mut level = vec![0usize; self.deps.len()];
        for &i in &self.topo_order {
            for &j in &self.dependents[i] {
                level[j] = level[j].max(level[i] + 1);
            }
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for l in level {
            *counts.entry(l).or_default() += 1;
        }
        counts.into_values().max().unwrap_or(0)
    }
}

/// Feature vector of one task at one instant, as seen by policy expressions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskRuntimeState {
    pub arrival_time: Micros,
    pub enqueue_time: Micros,
    pub wait_time: Micros,
    pub exec_runtime: Micros,
    pub vruntime: f64,
    pub expected_runtime: Micros,
    pub weight: u32,
    pub wakeup_count: u64,
    pub now: Micros,
}

/// What an agent is asked to optimize for a workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    MinMakespan,
    MinP99,
    MinAvgCompletion,
    MaxThroughput,
}

impl Goal {
    pub fn as_str(self) -> &'static str {
        match self {
            Goal::MinMakespan => "min_makespan",
            Goal::MinP99 => "min_p99",
            Goal::MinAvgCompletion => "min_avg_completion",
            Goal::MaxThroughput => "max_throughput",
        }
    }

    /// The raw metric this goal reads from a report.
    pub fn metric(self, m: &MetricsReport) -> f64 {
        match self {
            Goal::MinMakespan => m.makespan as f64,
            Goal::MinP99 => m.latency_p99 as f64,
            Goal::MinAvgCompletion => m.avg_completion,
            Goal::MaxThroughput => m.throughput,
        }
    }

    pub fn minimizes(self) -> bool {
        !matches!(self, Goal::MaxThroughput)
    }

    /// Signed percentage by which the candidate is worse than the baseline on
    /// this goal; negative means it improved.
    pub fn degradation_pct(self, d: &PerformanceDelta) -> f64 {
        match self {
            Goal::MinMakespan => d.makespan_pct,
            Goal::MinP99 => d.p99_pct,
            Goal::MinAvgCompletion => d.avg_completion_pct,
            Goal::MaxThroughput => -d.throughput_pct,
        }
    }

    pub fn improvement_pct(self, d: &PerformanceDelta) -> f64 {
        -self.degradation_pct(d)
    }

    /// Relative gain going from `before` to `after`, in percent, positive is better.
    pub fn gain_pct(self, before: f64, after: f64) -> f64 {
        if before == 0.0 {
            return 0.0;
        }
        if self.minimizes() {
            100.0 * (before - after) / before
        } else {
            100.0 * (after - before) / before
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
