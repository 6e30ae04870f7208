use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Finding, FindingCode, Sandbox};
use crate::analysis::goal_for_family;
use crate::domain::{compute_delta, Family, Goal, MetricsReport, PerformanceDelta, WorkloadSpec};
use crate::dsl::PolicySpec;
use crate::sim::{SimConfig, SimResult};

/// Family whose suite entries are held to the goal, and the goal itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicTarget {
    pub family: Family,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntryResult {
    pub workload: String,
    pub family: Family,
    pub goal: Goal,
    pub candidate: Option<MetricsReport>,
    pub baseline: Option<MetricsReport>,
    pub delta: Option<PerformanceDelta>,
    /// Whether this entry counts toward the performance gate.
    pub gated: bool,
}

/// Tasks the run should account for but does not, plus ids reported twice.
fn lost_tasks(w: &WorkloadSpec, r: &SimResult) -> (Vec<u32>, Vec<u32>) {
    let mut seen = BTreeSet::new();
    let mut dup = Vec::new();
    let ids = r.trace.iter().map(|t| t.id).chain(r.pending.iter().map(|p| p.id));
    for id in ids {
        if !seen.insert(id.0) {
            dup.push(id.0);
        }
    }
    let lost = w
        .tasks
        .iter()
        .filter(|t| r.complete || w.horizon.is_none() || t.arrival_time <= r.end_time)
        .map(|t| t.id.0)
        .filter(|id| !seen.contains(id))
        .collect();
    (lost, dup)
}

fn correctness(w: &WorkloadSpec, who: &str, r: &SimResult, out: &mut Vec<Finding>) {
    for v in &r.violations {
        out.push(
            Finding::error(
                FindingCode::SimViolation,
                format!("{who} on {}: {:?} at {}us: {}", w.name, v.kind, v.time, v.detail),
            )
            .with_witness(serde_json::json!({ "workload": w.name, "violation": v })),
        );
    }
    let (lost, dup) = lost_tasks(w, r);
    if !lost.is_empty() || !dup.is_empty() {
        out.push(
            Finding::error(
                FindingCode::TaskLost,
                format!("{who} on {}: {} tasks unaccounted for, {} reported twice", w.name, lost.len(), dup.len()),
            )
            .with_witness(serde_json::json!({ "workload": w, "lost": lost, "duplicated": dup })),
        );
    }
}

/// Stage 3: run candidate and baseline on each suite entry. Any simulator
/// violation or lost task is an error, as is a goal regression beyond
/// `threshold_pct` on a gated entry. Entries are gated when their family
/// matches `target`, or all of them (each with its family's default goal)
/// when no target is given.
pub fn validate_dynamic(
    spec: &PolicySpec,
    suite: &[WorkloadSpec],
    baseline: &PolicySpec,
    target: Option<DynamicTarget>,
    threshold_pct: f64,
    seed: u64,
    sandbox: &dyn Sandbox,
) -> (Vec<Finding>, Vec<SuiteEntryResult>) {
    let cfg = SimConfig::seeded(seed);
    let mut out = Vec::new();
    let mut results = Vec::new();
    for w in suite {
        let (goal, gated) = match target {
            Some(t) => (t.goal, t.family == w.family),
            None => (goal_for_family(w.family), true),
        };
        let mut entry = SuiteEntryResult {
            workload: w.name.clone(),
            family: w.family,
            goal,
            candidate: None,
            baseline: None,
            delta: None,
            gated,
        };
        match sandbox.run(w, spec, &cfg) {
            Ok(r) => {
                correctness(w, "candidate", &r, &mut out);
                entry.candidate = r.metrics;
            }
            Err(e) => out.push(Finding::error(FindingCode::SimError, format!("candidate on {}: {e}", w.name))),
        }
        match sandbox.run(w, baseline, &cfg) {
            Ok(r) => entry.baseline = r.metrics,
            Err(e) => out.push(Finding::warning(FindingCode::SimError, format!("baseline on {}: {e}", w.name))),
        }
        if let (Some(c), Some(b)) = (&entry.candidate, &entry.baseline) {
            match compute_delta(c, b) {
                Ok(d) => {
                    let worse = goal.degradation_pct(&d);
                    if gated && worse > threshold_pct {
                        out.push(
                            Finding::error(
                                FindingCode::PerfRegression,
                                format!(
                                    "{} regresses {:.1}% on {} (limit {threshold_pct}%)",
                                    goal.as_str(),
                                    worse,
                                    w.name
                                ),
                            )
                            .with_witness(serde_json::json!({ "workload": w.name, "delta": d })),
                        );
                    }
                    entry.delta = Some(d);
                }
                Err(e) => out.push(Finding::warning(FindingCode::SimError, format!("{}: {e}", w.name))),
            }
        }
        results.push(entry);
    }
    (out, results)
}
