use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Micros, TaskId, MICROS_PER_SEC};

/// Timestamps of one completed task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCompletion {
    pub id: TaskId,
    pub weight: u32,
    pub arrival: Micros,
    /// When the task last became runnable from a non-runnable state.
    pub wakeup: Micros,
    pub first_run: Micros,
    pub completion: Micros,
    /// CPU time attained.
    pub exec: Micros,
    /// Longest single stretch spent runnable but not running.
    pub max_wait: Micros,
}

pub type CompletionTrace = Vec<TaskCompletion>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks_completed: u64,
    pub makespan: Micros,
    pub avg_completion: f64,
    pub latency_p50: Micros,
    pub latency_p95: Micros,
    pub latency_p99: Micros,
    /// Completed tasks per simulated second.
    pub throughput: f64,
    pub max_wait_by_weight: BTreeMap<u32, Micros>,
    pub jain_fairness: f64,
    pub cpu_utilization: f64,
}

impl MetricsReport {
    /// Field-wise mean; integer fields are rounded to the nearest microsecond.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg_u = |f: fn(&MetricsReport) -> u64| {
            (reports.iter().map(|r| f(r) as f64).sum::<f64>() / n).round() as u64
        };
        let avg_f = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut max_wait_by_weight = BTreeMap::new();
        for r in reports {
            for (w, v) in &r.max_wait_by_weight {
                let e = max_wait_by_weight.entry(*w).or_insert(0);
                *e = (*e).max(*v);
            }
        }
        Some(MetricsReport {
            tasks_completed: avg_u(|r| r.tasks_completed),
            makespan: avg_u(|r| r.makespan),
            avg_completion: avg_f(|r| r.avg_completion),
            latency_p50: avg_u(|r| r.latency_p50),
            latency_p95: avg_u(|r| r.latency_p95),
            latency_p99: avg_u(|r| r.latency_p99),
            throughput: avg_f(|r| r.throughput),
            max_wait_by_weight,
            jain_fairness: avg_f(|r| r.jain_fairness),
            cpu_utilization: avg_f(|r| r.cpu_utilization),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceDelta {
    pub throughput_pct: f64,
    pub p99_pct: f64,
    pub makespan_pct: f64,
    pub avg_completion_pct: f64,
}

impl PerformanceDelta {
    pub const ZERO: PerformanceDelta = PerformanceDelta {
        throughput_pct: 0.0,
        p99_pct: 0.0,
        makespan_pct: 0.0,
        avg_completion_pct: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("completion trace is empty")]
    EmptyTrace,
    #[error("task {0} has inconsistent timestamps")]
    InvalidTiming(TaskId),
    #[error("elapsed time must be positive")]
    ZeroElapsed,
    #[error("baseline field `{0}` is not positive")]
    DegenerateBaseline(&'static str),
}

/// Nearest-rank percentile of an ascending slice.
fn nearest_rank(sorted: &[Micros], pct: f64) -> Micros {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn compute_metrics(
    trace: &[TaskCompletion],
    core_count: u32,
    elapsed: Micros,
) -> Result<MetricsReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if elapsed == 0 {
        return Err(MetricsError::ZeroElapsed);
    }
    for t in trace {
        let ordered = t.arrival <= t.wakeup && t.wakeup <= t.first_run && t.first_run <= t.completion;
        if !ordered || t.exec > t.completion - t.wakeup || t.weight == 0 {
            return Err(MetricsError::InvalidTiming(t.id));
        }
    }

    let n = trace.len() as f64;
    let start = trace.iter().map(|t| t.arrival).min().unwrap_or(0);
    let end = trace.iter().map(|t| t.completion).max().unwrap_or(0);

    let mut latencies: Vec<Micros> = trace.iter().map(|t| t.completion - t.wakeup).collect();
    latencies.sort_unstable();

    let avg_completion = trace
        .iter()
        .map(|t| (t.completion - t.arrival) as f64)
        .sum::<f64>()
        / n;

    let mut max_wait_by_weight = BTreeMap::new();
    for t in trace {
        let e = max_wait_by_weight.entry(t.weight).or_insert(0);
        *e = (*e).max(t.max_wait);
    }

    // Jain index over weight-normalized attained share of residence time.
    let shares: Vec<f64> = trace
        .iter()
        .map(|t| {
            let residence = (t.completion - t.wakeup).max(1) as f64;
            t.exec as f64 / residence / t.weight as f64
        })
        .collect();
    let sum: f64 = shares.iter().sum();
    let sum_sq: f64 = shares.iter().map(|x| x * x).sum();
    let jain_fairness = if sum_sq > 0.0 {
        ((sum * sum) / (n * sum_sq)).clamp(f64::MIN_POSITIVE, 1.0)
    } else {
        1.0
    };

    let busy: u64 = trace.iter().map(|t| t.exec).sum();
    let cpu_utilization = (busy as f64 / (core_count.max(1) as f64 * elapsed as f64)).clamp(0.0, 1.0);

    Ok(MetricsReport {
        tasks_completed: trace.len() as u64,
        makespan: end - start,
        avg_completion,
        latency_p50: nearest_rank(&latencies, 50.0),
        latency_p95: nearest_rank(&latencies, 95.0),
        latency_p99: nearest_rank(&latencies, 99.0),
        throughput: n / (elapsed as f64 / MICROS_PER_SEC as f64),
        max_wait_by_weight,
        jain_fairness,
        cpu_utilization,
    })
}

pub fn compute_delta(
    candidate: &MetricsReport,
    baseline: &MetricsReport,
) -> Result<PerformanceDelta, MetricsError> {
    let pct = |c: f64, b: f64, field: &'static str| {
        if b > 0.0 {
            Ok(100.0 * (c - b) / b)
        } else {
            Err(MetricsError::DegenerateBaseline(field))
        }
    };
    Ok(PerformanceDelta {
        throughput_pct: pct(candidate.throughput, baseline.throughput, "throughput")?,
        p99_pct: pct(candidate.latency_p99 as f64, baseline.latency_p99 as f64, "latency_p99")?,
        makespan_pct: pct(candidate.makespan as f64, baseline.makespan as f64, "makespan")?,
        avg_completion_pct: pct(candidate.avg_completion, baseline.avg_completion, "avg_completion")?,
    })
}
