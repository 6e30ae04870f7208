//! Tiered workload observation: a cheap byte-capped summary (tier 1), opt-in
//! deep probes (tier 2), rule-based classification into an optimization
//! goal, and the post-deployment feedback ledger.

mod feedback;
mod probe;

pub use feedback::{FeedbackLedger, WindowSide};
pub use probe::{
    DagProfile, DurationProfile, LongTask, Probe, ProbeSource, ProfileReport, SimProbeSource,
    WakeProfile,
};

use std::fmt::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{canonical_hash, Family, Goal, Micros, WorkloadSpec};

/// Smallest summary budget, in bytes, that `summarize` accepts.
pub const MIN_SUMMARY_BUDGET: usize = 128;
pub const HISTOGRAM_BUCKETS: usize = 8;
pub const SUMMARY_COST: u64 = 1;
pub const PROBE_COST: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("session has no workload source bound")]
    UnboundSession,
    #[error("budget of {0} bytes is below the {MIN_SUMMARY_BUDGET}-byte minimum")]
    BudgetTooSmall(usize),
    #[error("probe `{0}` is not supported by this source")]
    UnsupportedProbe(String),
    #[error("no probes requested")]
    EmptyProbeSet,
    #[error("unknown deployment `{0}`")]
    UnknownDeployment(String),
    #[error("deployment `{0}` lacks a measured baseline or candidate window")]
    WindowIncomplete(String),
    #[error("deployment `{0}` already exists")]
    DuplicateDeployment(String),
    #[error("deployment `{0}` is closed")]
    DeploymentClosed(String),
    #[error("metrics: {0}")]
    Metrics(#[from] crate::domain::MetricsError),
}

/// Coarse shape of the duration histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramShape {
    Unimodal,
    Bimodal,
    Spread,
}

impl HistogramShape {
    fn of(counts: &[u64]) -> Self {
        // number of maximal runs of occupied buckets
        let runs = counts
            .iter()
            .enumerate()
            .filter(|&(i, &c)| c > 0 && (i == 0 || counts[i - 1] == 0))
            .count();
        match runs {
            0 | 1 => HistogramShape::Unimodal,
            2 => HistogramShape::Bimodal,
            _ => HistogramShape::Spread,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            HistogramShape::Unimodal => "unimodal",
            HistogramShape::Bimodal => "bimodal",
            HistogramShape::Spread => "spread",
        }
    }
}

/// Log-spaced histogram of task work spanning `[min, max]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationHistogram {
    pub min: Micros,
    pub max: Micros,
    pub counts: Vec<u64>,
    pub shape: HistogramShape,
}

impl DurationHistogram {
    pub fn build(works: &[Micros]) -> Self {
        let min = works.iter().copied().min().unwrap_or(0);
        let max = works.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0u64; HISTOGRAM_BUCKETS];
        let span = if min > 0 && max > min {
            (max as f64 / min as f64).ln()
        } else {
            0.0
        };
        for &w in works {
            let b = if span > 0.0 {
                let x = (w.max(1) as f64 / min as f64).ln() / span;
                ((x * HISTOGRAM_BUCKETS as f64) as usize).min(HISTOGRAM_BUCKETS - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        let shape = HistogramShape::of(&counts);
        DurationHistogram {
            min,
            max,
            counts,
            shape,
        }
    }

    pub fn occupied(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&i| self.counts[i] > 0).collect()
    }
}

/// Tier-1 view of a workload, built from cheap counters only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    pub family: Family,
    pub task_count: u64,
    pub core_count: u32,
    pub arrival_span: Micros,
    pub histogram: DurationHistogram,
    /// Widest dependency level, i.e. how many tasks could run at once.
    pub parallelism: u64,
    /// Total work over core capacity across max(arrival span, longest task).
    pub load: f64,
    /// The summary rendered to fit the requested budget.
    pub text: String,
    /// Field lines dropped to fit the budget, lowest salience first.
    pub truncated: Vec<String>,
}

/// Goal and description derived from observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub description: String,
    pub family: Family,
    pub optimization_goal: Goal,
    pub confidence: f64,
    pub fingerprint: String,
}

/// Per-session state of the analysis engine.
pub struct AnalysisSession {
    source: Option<Arc<dyn ProbeSource>>,
    cost: u64,
}

impl std::fmt::Debug for AnalysisSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalysisSession")
            .field("bound", &self.source.is_some())
            .field("cost", &self.cost)
            .finish()
    }
}

impl AnalysisSession {
    pub fn new(source: Option<Arc<dyn ProbeSource>>) -> Self {
        AnalysisSession { source, cost: 0 }
    }

    pub fn for_workload(workload: WorkloadSpec) -> Self {
        Self::new(Some(Arc::new(SimProbeSource::new(workload))))
    }

    pub fn bind(&mut self, source: Arc<dyn ProbeSource>) {
        self.source = Some(source);
    }

    pub fn source(&self) -> Result<&Arc<dyn ProbeSource>, AnalysisError> {
        self.source.as_ref().ok_or(AnalysisError::UnboundSession)
    }

    /// The simulator-visible workload behind the source.
    pub fn workload(&self) -> Result<&WorkloadSpec, AnalysisError> {
        Ok(self.source()?.workload())
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    /// Add `units` to the session's cost counter.
    pub fn charge(&mut self, units: u64) {
        self.cost += units;
    }
}

/// Cost of a `profile_deep` call with `n` probes.
pub fn probe_cost(n: usize) -> u64 {
    PROBE_COST * n as u64
}

pub fn summarize(session: &mut AnalysisSession, budget_bytes: usize) -> Result<WorkloadSummary, AnalysisError> {
    let source = session.source()?.clone();
    if budget_bytes < MIN_SUMMARY_BUDGET {
        return Err(AnalysisError::BudgetTooSmall(budget_bytes));
    }
    let w = source.workload();
    let works: Vec<Micros> = w.tasks.iter().map(|t| t.total_work).collect();
    let histogram = DurationHistogram::build(&works);
    let first = w.tasks.iter().map(|t| t.arrival_time).min().unwrap_or(0);
    let last = w.tasks.iter().map(|t| t.arrival_time).max().unwrap_or(0);
    let total: u128 = works.iter().map(|&x| x as u128).sum();
    let window = (last - first).max(histogram.max).max(1);
    let load = total as f64 / (w.core_count.max(1) as f64 * window as f64);
    let parallelism = w.dependency_graph().map(|g| g.width()).unwrap_or(w.tasks.len()) as u64;

    // salience order: family > counts > histogram > parallelism > load
    let lines = [
        ("family", format!("family: {}", w.family)),
        ("counts", format!(
            "tasks: {}, cores: {}, arrival span: {}us",
            w.tasks.len(),
            w.core_count,
            last - first
        )),
        ("histogram", format!(
            "duration histogram, {} log buckets from {}us to {}us: {:?} shape={}",
            HISTOGRAM_BUCKETS,
            histogram.min,
            histogram.max,
            histogram.counts,
            histogram.shape.as_str()
        )),
        ("parallelism", format!("parallelism: {parallelism}")),
        ("load", format!("load: {load:.2}")),
    ];
    let mut text = String::new();
    let mut truncated = Vec::new();
    for (label, line) in lines {
        let extra = if text.is_empty() { line.len() } else { line.len() + 1 };
        if truncated.is_empty() && text.len() + extra <= budget_bytes {
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&line);
        } else {
            truncated.push(label.to_string());
        }
    }
    session.charge(SUMMARY_COST);
    Ok(WorkloadSummary {
        family: w.family,
        task_count: w.tasks.len() as u64,
        core_count: w.core_count,
        arrival_span: last - first,
        histogram,
        parallelism,
        load,
        text,
        truncated,
    })
}

/// Run each requested probe; the report holds exactly those sections.
pub fn profile_deep(session: &mut AnalysisSession, probes: &[String]) -> Result<ProfileReport, AnalysisError> {
    let source = session.source()?.clone();
    if probes.is_empty() {
        return Err(AnalysisError::EmptyProbeSet);
    }
    let mut parsed = Vec::with_capacity(probes.len());
    for name in probes {
        let p = name
            .parse::<Probe>()
            .ok()
            .filter(|p| source.supports(*p))
            .ok_or_else(|| AnalysisError::UnsupportedProbe(name.clone()))?;
        if !parsed.contains(&p) {
            parsed.push(p);
        }
    }
    let mut report = ProfileReport::default();
    for p in &parsed {
        source.run(*p, &mut report);
    }
    session.charge(probe_cost(parsed.len()));
    Ok(report)
}

/// Goal mapping per family: build-dag → makespan, latency-chain → p99,
/// batch-longtail → mean completion, anything else → throughput at low
/// confidence.
pub fn goal_for_family(family: Family) -> Goal {
    match family {
        Family::BuildDag => Goal::MinMakespan,
        Family::LatencyChain => Goal::MinP99,
        Family::BatchLongtail => Goal::MinAvgCompletion,
        Family::Custom => Goal::MaxThroughput,
    }
}

pub fn classify(summary: &WorkloadSummary, report: Option<&ProfileReport>) -> WorkloadProfile {
    let goal = goal_for_family(summary.family);
    let confidence = match summary.family {
        Family::Custom if report.is_some() => 0.5,
        Family::Custom => 0.3,
        _ => 0.9,
    };
    let h = &summary.histogram;
    let mut description = format!(
        "{} workload: {} tasks on {} cores, {} durations {}us..{}us, parallelism {}, load {:.2}",
        summary.family,
        summary.task_count,
        summary.core_count,
        h.shape.as_str(),
        h.min,
        h.max,
        summary.parallelism,
        summary.load
    );
    if let Some(r) = report {
        if let Some(d) = &r.durations {
            if let Some(top) = d.longest.first() {
                let _ = write!(description, "; longest task {} runs {}us", top.id, top.work);
            }
        }
        if let Some(g) = &r.dag {
            let _ = write!(description, "; dependency depth {} width {}", g.depth, g.width);
        }
        if let Some(wk) = &r.wakeups {
            let _ = write!(description, "; {} wake chains up to {} long", wk.chains, wk.max_chain_len);
        }
    }
    WorkloadProfile {
        description,
        family: summary.family,
        optimization_goal: goal,
        confidence,
        fingerprint: fingerprint(summary),
    }
}

/// Hash of spec-level features only, so reruns and metric noise leave it unchanged.
pub fn fingerprint(summary: &WorkloadSummary) -> String {
    canonical_hash(&serde_json::json!({
        "family": summary.family,
        "task_count": summary.task_count,
        "core_count": summary.core_count,
        "histogram": summary.histogram.counts,
    }))
}
