//! Deterministic discrete-event CPU scheduler simulator and workload
//! generators.
//!
//! A run processes events in `(time, sequence)` order. All events sharing a
//! timestamp are applied before any dispatch decision, so tasks that arrive
//! together compete together. Preemptive policies are re-evaluated at
//! arrivals, wakeups and slice expiries; non-preemptive ones only when a
//! core frees up.

mod engine;
mod export;
mod generators;

pub use export::{trace_csv, TRACE_CSV_HEADER};
pub use generators::{
    build_dag_layer_sizes, gen_build_dag, gen_latency_chain, gen_latency_chain_with,
    gen_longtail_batch, DurationDist, GenError, LatencyChainParams,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Micros, MetricsReport, TaskId, WorkloadError, WorkloadSpec};
use crate::dsl::{DslError, PolicySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Relative standard deviation applied to runtime hints (0 = truthful).
    #[serde(default)]
    pub hint_noise: f64,
    /// Skip the divisor-safety precheck; evaluation errors surface at runtime.
    #[serde(default)]
    pub dry_run: bool,
}

impl SimConfig {
    pub fn seeded(seed: u64) -> Self {
        SimConfig {
            seed,
            hint_noise: 0.0,
            dry_run: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    SliceExpiry,
    Completion,
    Wakeup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Micros,
    pub kind: EventKind,
    pub task: TaskId,
    pub sequence: u64,
}

/// Per-task timestamps of a completed task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub id: TaskId,
    pub weight: u32,
    pub arrival: Micros,
    pub enqueue: Micros,
    pub first_run: Micros,
    pub completion: Micros,
    pub exec: Micros,
    pub max_wait: Micros,
    pub total_wait: Micros,
    pub dispatches: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingState {
    Blocked,
    Queued,
    Running,
}

/// A task that had arrived but not completed when the horizon hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTask {
    pub id: TaskId,
    pub weight: u32,
    pub state: PendingState,
    pub exec: Micros,
    /// Longest wait so far, including the wait still in progress.
    pub max_wait: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    WorkConservation,
    TaskConservation,
    DependencyOrder,
    ClockRegression,
    NonPreemption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub time: Micros,
    pub kind: ViolationKind,
    pub task: Option<TaskId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub workload: String,
    pub policy: String,
    /// False when the horizon stopped the run before every task completed.
    pub complete: bool,
    /// `None` only when no task completed.
    pub metrics: Option<MetricsReport>,
    pub trace: Vec<TaskTrace>,
    pub pending: Vec<PendingTask>,
    pub violations: Vec<Violation>,
    pub arrivals: u64,
    pub event_count: u64,
    pub end_time: Micros,
}

impl SimResult {
    pub fn metrics(&self) -> Result<&MetricsReport, SimError> {
        self.metrics.as_ref().ok_or(SimError::NothingCompleted)
    }

    /// Longest wait of any task, finished or not.
    pub fn max_wait_of(&self, id: TaskId) -> Option<Micros> {
        self.trace
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.max_wait)
            .or_else(|| self.pending.iter().find(|t| t.id == id).map(|t| t.max_wait))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(#[from] WorkloadError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(DslError),
    #[error("policy evaluation failed for task {task}: {source}")]
    RuntimeEval { task: TaskId, source: DslError },
    #[error("no task completed before the horizon")]
    NothingCompleted,
}

/// Run `policy` over `workload` with truthful hints.
pub fn simulate(workload: &WorkloadSpec, policy: &PolicySpec, seed: u64) -> Result<SimResult, SimError> {
    simulate_with(workload, policy, &SimConfig::seeded(seed))
}

pub fn simulate_with(
    workload: &WorkloadSpec,
    policy: &PolicySpec,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    policy.validate().map_err(SimError::InvalidPolicy)?;
    if !config.dry_run {
        let mut bad = crate::dsl::interval::unsafe_divisors(&policy.priority, &policy.params);
        if let Some(s) = &policy.slice {
            bad.extend(crate::dsl::interval::unsafe_divisors(s, &policy.params));
        }
        if !bad.is_empty() {
            return Err(SimError::InvalidPolicy(DslError::InvalidSpec(format!(
                "divisor `{}` may be zero",
                crate::dsl::render_expr(&bad[0].divisor)
            ))));
        }
    }
    engine::Engine::new(workload, policy, config)?.run()
}
