use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AgentConfig, IterationRecord};
use crate::analysis::WorkloadProfile;
use crate::domain::Goal;
use crate::dsl::{PatchEdit, PolicySpec, SLICE_MIN};
use crate::repo::PolicyStatus;
use crate::verifier::{Stage, ValidationReport};

/// One repository search result as the loop sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub name: String,
    pub status: PolicyStatus,
    pub normalized: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanVariant {
    ConfigureExisting {
        policy_id: String,
        params: std::collections::BTreeMap<String, f64>,
    },
    Patch {
        policy_id: String,
        edits: Vec<PatchEdit>,
    },
    ComposeNew {
        fragments: Vec<String>,
        weights: Vec<f64>,
    },
}

impl PlanVariant {
    /// Position on the configure, patch, compose ladder.
    pub fn level(&self) -> u8 {
        match self {
            PlanVariant::ConfigureExisting { .. } => 0,
            PlanVariant::Patch { .. } => 1,
            PlanVariant::ComposeNew { .. } => 2,
        }
    }

    pub fn policy_id(&self) -> Option<&str> {
        match self {
            PlanVariant::ConfigureExisting { policy_id, .. } | PlanVariant::Patch { policy_id, .. } => Some(policy_id),
            PlanVariant::ComposeNew { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decrease,
    Increase,
}

impl Direction {
    pub fn for_goal(goal: Goal) -> Self {
        if goal.minimizes() {
            Direction::Decrease
        } else {
            Direction::Increase
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub variant: PlanVariant,
    pub rationale: String,
    pub goal: Goal,
    /// Which way the goal metric should move if the plan works.
    pub expected: Direction,
}

/// What a provider sees when planning.
pub struct PlanContext<'a> {
    pub profile: &'a WorkloadProfile,
    pub hits: &'a [SearchHit],
    pub excluded: &'a BTreeSet<String>,
    pub history: &'a [IterationRecord],
    pub config: &'a AgentConfig,
}

/// Makes the loop's choices. Everything else the loop does is mechanical.
pub trait DecisionProvider {
    /// Repository query for a profile.
    fn query(&self, profile: &WorkloadProfile) -> String;

    fn plan(&self, ctx: &PlanContext<'_>) -> Plan;

    /// Edits that address a failed validation, or `None` to give up.
    /// `attempt` counts refinements already made for this plan.
    fn refine(&self, spec: &PolicySpec, report: &ValidationReport, goal: Goal, attempt: u32) -> Option<Vec<PatchEdit>>;
}

/// Deterministic rule-based provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicProvider;

pub const AGING_BASE: f64 = 0.01;

fn aging_term(coefficient: f64) -> PatchEdit {
    PatchEdit::AddPriorityTerm {
        expr: format!("{coefficient} * wait_time"),
    }
}

/// Fragments a new policy is composed from, per goal.
pub fn compose_recipe(goal: Goal) -> (Vec<String>, Vec<f64>) {
    let (names, weights): (&[&str], &[f64]) = match goal {
        Goal::MinAvgCompletion | Goal::MinMakespan => (&["longest_first", "aging"], &[1.0, AGING_BASE]),
        Goal::MinP99 => (&["fair_share"], &[1.0]),
        Goal::MaxThroughput => (&["shortest_first", "aging"], &[1.0, AGING_BASE]),
    };
    (names.iter().map(|s| s.to_string()).collect(), weights.to_vec())
}

/// Edits that move a base policy toward the goal. Mean completion and
/// throughput want shortest first, makespan wants longest first, and tail
/// latency wants a shorter slice.
pub fn patch_recipe(goal: Goal, base: &PolicySpec) -> Vec<PatchEdit> {
    let reorder = |expr: &str| PatchEdit::Priority {
        expr: format!("{expr} + {AGING_BASE} * wait_time"),
    };
    match goal {
        Goal::MinAvgCompletion | Goal::MaxThroughput => vec![reorder("-expected_runtime")],
        Goal::MinMakespan => vec![reorder("expected_runtime")],
        Goal::MinP99 => match halve_slice(base) {
            Some(e) => vec![e],
            None => vec![aging_term(AGING_BASE)],
        },
    }
}

fn halve_slice(spec: &PolicySpec) -> Option<PatchEdit> {
    let p = spec.params.get("slice_base")?;
    let value = (p.value / 2.0).max(p.min).max(SLICE_MIN);
    (value < p.value).then(|| PatchEdit::Param {
        name: "slice_base".into(),
        value,
    })
}

impl DecisionProvider for HeuristicProvider {
    fn query(&self, profile: &WorkloadProfile) -> String {
        profile.family.as_str().replace('-', " ")
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Plan {
        let goal = ctx.profile.optimization_goal;
        let top = ctx
            .hits
            .iter()
            .find(|h| h.status != PolicyStatus::Retired && !ctx.excluded.contains(&h.id));
        let by_score = match top {
            Some(h) if h.normalized >= ctx.config.theta_high => 0,
            Some(h) if h.normalized >= ctx.config.theta_low => 1,
            _ => 2,
        };
        // each further iteration climbs one rung
        let floor = ctx.history.last().map_or(0, |r| r.plan.variant.level() + 1);
        let level = by_score.max(floor).min(2);
        let base = top.and_then(|h| crate::dsl::parse_policy(&h.source).ok().map(|s| (h, s)));
        let (variant, rationale) = match (level, base) {
            (0, Some((h, _))) => (
                PlanVariant::ConfigureExisting {
                    policy_id: h.id.clone(),
                    params: Default::default(),
                },
                format!("`{}` matches the profile at {:.2}", h.name, h.normalized),
            ),
            (1, Some((h, spec))) => (
                PlanVariant::Patch {
                    policy_id: h.id.clone(),
                    edits: patch_recipe(goal, &spec),
                },
                format!("patch `{}` ({:.2}) toward {}", h.name, h.normalized, goal.as_str()),
            ),
            _ => {
                let (fragments, weights) = compose_recipe(goal);
                let why = format!("compose {} for {}", fragments.join(" + "), goal.as_str());
                (PlanVariant::ComposeNew { fragments, weights }, why)
            }
        };
        Plan {
            variant,
            rationale,
            goal,
            expected: Direction::for_goal(goal),
        }
    }

    fn refine(&self, spec: &PolicySpec, report: &ValidationReport, goal: Goal, attempt: u32) -> Option<Vec<PatchEdit>> {
        let failed = report.stages.iter().find(|s| !s.passed)?;
        match failed.stage {
            Stage::Structural => None,
            Stage::Starvation => Some(vec![aging_term(AGING_BASE * 2f64.powi(attempt as i32))]),
            Stage::Dynamic if goal == Goal::MinP99 => halve_slice(spec).map(|e| vec![e]),
            Stage::Dynamic => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{apply_patch, builtin};

    #[test]
    fn patch_recipes_validate() {
        for goal in [Goal::MinAvgCompletion, Goal::MinMakespan, Goal::MinP99, Goal::MaxThroughput] {
            for name in crate::dsl::BUILTIN_NAMES {
                let base = builtin(name).unwrap();
                apply_patch(&base, &patch_recipe(goal, &base)).unwrap();
            }
        }
    }

    #[test]
    fn slice_halving_stops_at_floor() {
        let mut spec = builtin("fair_vruntime").unwrap();
        spec.params.get_mut("slice_base").unwrap().value = SLICE_MIN;
        assert!(halve_slice(&spec).is_none());
    }
}
