//! Observe, plan, execute, learn. The loop drives a control-plane server
//! through its JSON-RPC tools only; policy text is built locally with the DSL
//! and sent as source.

mod client;
mod provider;
#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use client::{LocalClient, ToolClient};
pub use provider::{
    compose_recipe, patch_recipe, DecisionProvider, Direction, HeuristicProvider, Plan, PlanContext, PlanVariant,
    SearchHit, AGING_BASE,
};

use crate::analysis::{Probe, WorkloadProfile};
use crate::domain::{Goal, MetricsReport, PerformanceDelta, WorkloadSpec};
use crate::dsl::{apply_patch, compose, fragment_library, parse_policy, render_policy, PolicySpec};
use crate::repo::PolicyStatus;
use crate::verifier::{CanaryPhase, CanaryState, FindingCode, Severity, ValidationReport, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Normalized search score at or above which an existing policy is reused.
    pub theta_high: f64,
    /// Below this nothing in the repository is close enough to patch.
    pub theta_low: f64,
    /// Classification confidence under which tier-2 probes are requested.
    pub confidence_threshold: f64,
    pub max_refinements: u32,
    /// Stop once a deployment gains less than this, in percent.
    pub min_gain_pct: f64,
    pub summary_budget: usize,
    pub search_k: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            theta_high: 0.75,
            theta_low: 0.3,
            confidence_threshold: 0.8,
            max_refinements: 3,
            min_gain_pct: 2.0,
            summary_budget: 512,
            search_k: 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no open session")]
    NoSession,
    #[error("`{tool}` failed with {kind}: {message}")]
    Tool { tool: String, kind: String, message: String },
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("plan no longer valid for `{policy_id}`: {reason}")]
    PlanInvalid { policy_id: String, reason: String },
    #[error("policy construction failed: {0}")]
    Dsl(String),
    #[error("validation still failing after {} attempts", trail.len())]
    ExhaustedRefinements { trail: Vec<RefinementStep> },
    #[error("deployment `{0}` was already learned from")]
    DuplicateDeployment(String),
}

impl AgentError {
    /// Error kind reported by the server, if this came from a tool.
    pub fn tool_kind(&self) -> Option<&str> {
        match self {
            AgentError::Tool { kind, .. } => Some(kind),
            _ => None,
        }
    }
}

/// One validation attempt and the edits made in response to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub attempt: u32,
    pub policy_id: String,
    pub verdict: Verdict,
    pub findings: Vec<FindingCode>,
    pub edits: Vec<crate::dsl::PatchEdit>,
}

/// What `execute` produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub policy_id: String,
    pub policy_name: String,
    pub source: String,
    pub trail: Vec<RefinementStep>,
    /// Gain the validation suite predicts over the live policy, in percent.
    pub predicted_gain_pct: f64,
    pub deployment_id: Option<String>,
    pub canary: Option<CanaryState>,
}

impl Execution {
    pub fn refinements(&self) -> u32 {
        self.trail.len().saturating_sub(1) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnAction {
    /// Outcome recorded and the policy promoted in the repository.
    Promoted { policy_id: String },
    /// Outcome recorded; the policy stays where it was.
    Recorded { policy_id: String },
    Antipattern { policy_id: String, note: String },
    /// Nothing was deployed.
    Nothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hint {
    /// Worth another iteration from here.
    Refine,
    TryAlternative,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub profile: WorkloadProfile,
    pub plan: Plan,
    pub verdict: Verdict,
    pub trail: Vec<RefinementStep>,
    pub policy_id: Option<String>,
    pub deployment_id: Option<String>,
    pub phase: Option<CanaryPhase>,
    /// Canary outcome against the policy that was live before.
    pub delta: Option<PerformanceDelta>,
    pub gain_pct: Option<f64>,
    /// Goal metric of the live policy once the iteration is over.
    pub live_metric: f64,
    pub action: LearnAction,
    pub hint: Hint,
}

impl IterationRecord {
    pub fn refinements(&self) -> u32 {
        self.trail.len().saturating_sub(1) as u32
    }
}

/// The four-stage loop over one session.
pub struct Agent<C, P> {
    client: C,
    provider: P,
    config: AgentConfig,
    session: Option<String>,
    learned: BTreeSet<String>,
    excluded: BTreeSet<String>,
    history: Vec<IterationRecord>,
    baseline_metric: Option<f64>,
}

fn decode<T: for<'de> Deserialize<'de>>(v: Value, what: &str) -> Result<T, AgentError> {
    serde_json::from_value(v).map_err(|e| AgentError::Protocol(format!("{what}: {e}")))
}

fn field<T: for<'de> Deserialize<'de>>(v: &Value, key: &str) -> Result<T, AgentError> {
    decode(v.get(key).cloned().unwrap_or(Value::Null), key)
}

fn error_codes(report: &ValidationReport) -> Vec<FindingCode> {
    report
        .findings()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| f.code)
        .collect()
}

impl<C: ToolClient, P: DecisionProvider> Agent<C, P> {
    pub fn new(client: C, provider: P, config: AgentConfig) -> Self {
        Agent {
            client,
            provider,
            config,
            session: None,
            learned: BTreeSet::new(),
            excluded: BTreeSet::new(),
            history: Vec::new(),
            baseline_metric: None,
        }
    }

    /// Open a session on `workload` and attach to it.
    pub fn open(&mut self, workload: &WorkloadSpec, cost_cap: Option<u64>) -> Result<String, AgentError> {
        self.client.request("initialize", json!({}))?;
        let mut args = json!({ "workload": workload });
        if let Some(cap) = cost_cap {
            args["cost_cap"] = json!(cap);
        }
        let out = self.client.call_tool("session.open", args)?;
        let id: String = field(&out, "session")?;
        self.attach(&id);
        Ok(id)
    }

    pub fn attach(&mut self, session: &str) {
        self.session = Some(session.to_string());
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    /// Goal metric of the live policy when the loop started.
    pub fn baseline_metric(&self) -> Option<f64> {
        self.baseline_metric
    }

    fn call(&mut self, tool: &str, mut args: Value) -> Result<Value, AgentError> {
        let s = self.session.clone().ok_or(AgentError::NoSession)?;
        args["session"] = json!(s);
        self.client.call_tool(tool, args)
    }

    /// Summary first; deeper probes only when classification is unsure.
    pub fn observe(&mut self) -> Result<WorkloadProfile, AgentError> {
        let summary = self.call("summarize", json!({ "budget": self.config.summary_budget }))?;
        let profile: WorkloadProfile = decode(self.call("classify", json!({ "summary": summary }))?, "profile")?;
        if profile.confidence >= self.config.confidence_threshold {
            return Ok(profile);
        }
        let probes: Vec<&str> = Probe::ALL.iter().map(|p| p.as_str()).collect();
        let report = self.call("profile_deep", json!({ "probes": probes }))?;
        decode(
            self.call("classify", json!({ "summary": summary, "report": report }))?,
            "profile",
        )
    }

    pub fn plan(&mut self, profile: &WorkloadProfile) -> Result<Plan, AgentError> {
        let query = self.provider.query(profile);
        let out = self.call("repo.search", json!({ "query": query, "k": self.config.search_k }))?;
        let hits: Vec<SearchHit> = field(&out, "hits")?;
        let ctx = PlanContext {
            profile,
            hits: &hits,
            excluded: &self.excluded,
            history: &self.history,
            config: &self.config,
        };
        Ok(self.provider.plan(&ctx))
    }

    fn live_policy(&mut self) -> Result<String, AgentError> {
        let status = self.call("session.status", json!({}))?;
        status["active_policy"]["source"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AgentError::Protocol("status without active policy".into()))
    }

    /// Goal metric of the live policy on the session workload.
    pub fn live_metric(&mut self, goal: Goal) -> Result<f64, AgentError> {
        let source = self.live_policy()?;
        let out = self.call("simulate", json!({ "policy": { "source": source } }))?;
        let m: MetricsReport = field(&out, "metrics")?;
        Ok(goal.metric(&m))
    }

    fn fetch_base(&mut self, id: &str) -> Result<PolicySpec, AgentError> {
        let out = self.call("repo.get", json!({ "id": id })).map_err(|e| match e.tool_kind() {
            Some("UnknownPolicy") => AgentError::PlanInvalid {
                policy_id: id.to_string(),
                reason: "not in the repository".into(),
            },
            _ => e,
        })?;
        let status: PolicyStatus = field(&out["record"], "status")?;
        if status == PolicyStatus::Retired {
            return Err(AgentError::PlanInvalid {
                policy_id: id.to_string(),
                reason: "retired".into(),
            });
        }
        let source: String = field(&out, "source")?;
        parse_policy(&source).map_err(|e| AgentError::Dsl(e.to_string()))
    }

    fn materialize(&mut self, plan: &Plan) -> Result<PolicySpec, AgentError> {
        let dsl = |e: crate::dsl::DslError| AgentError::Dsl(e.to_string());
        match &plan.variant {
            PlanVariant::ConfigureExisting { policy_id, params } => {
                let mut spec = self.fetch_base(policy_id)?;
                for (name, value) in params {
                    let p = spec
                        .params
                        .get_mut(name)
                        .ok_or_else(|| AgentError::Dsl(format!("no param `{name}`")))?;
                    p.value = *value;
                }
                spec.validate().map_err(dsl)?;
                Ok(spec)
            }
            PlanVariant::Patch { policy_id, edits } => {
                let base = self.fetch_base(policy_id)?;
                apply_patch(&base, edits).map_err(dsl)
            }
            PlanVariant::ComposeNew { fragments, weights } => {
                let lib: BTreeMap<String, _> = fragment_library().into_iter().map(|f| (f.name.clone(), f)).collect();
                let picked = fragments
                    .iter()
                    .map(|n| lib.get(n).cloned().ok_or_else(|| AgentError::Dsl(format!("no fragment `{n}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                compose(&picked, weights).map_err(dsl)
            }
        }
    }

    /// Build the planned policy, validate it against the live one with up to
    /// `max_refinements` automatic fixes, and canary it when the suite
    /// predicts a gain.
    pub fn execute(&mut self, plan: &Plan) -> Result<Execution, AgentError> {
        let mut spec = self.materialize(plan)?;
        let live = self.live_policy()?;
        let mut trail = Vec::new();
        let mut attempt = 0;
        let (report, token) = loop {
            let source = render_policy(&spec);
            let out = self.call(
                "verify.pipeline",
                json!({ "policy": { "source": source }, "baseline": { "source": live }, "goal": plan.goal }),
            )?;
            let report: ValidationReport = field(&out, "report")?;
            let mut step = RefinementStep {
                attempt,
                policy_id: spec.content_id(),
                verdict: report.verdict,
                findings: error_codes(&report),
                edits: Vec::new(),
            };
            if report.verdict == Verdict::Pass {
                trail.push(step);
                break (report, out["token"].clone());
            }
            let edits = match attempt < self.config.max_refinements {
                true => self.provider.refine(&spec, &report, plan.goal, attempt),
                false => None,
            };
            let Some(edits) = edits else {
                trail.push(step);
                return Err(AgentError::ExhaustedRefinements { trail });
            };
            spec = apply_patch(&spec, &edits).map_err(|e| AgentError::Dsl(e.to_string()))?;
            step.edits = edits;
            trail.push(step);
            attempt += 1;
        };

        let predicted_gain_pct = report
            .suite_results
            .iter()
            .filter(|r| r.gated)
            .filter_map(|r| r.delta.as_ref().map(|d| plan.goal.improvement_pct(d)))
            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
            .unwrap_or(0.0);
        let mut exec = Execution {
            policy_id: spec.content_id(),
            policy_name: spec.name.clone(),
            source: render_policy(&spec),
            trail,
            predicted_gain_pct,
            deployment_id: None,
            canary: None,
        };
        // no point exposing live traffic to something the suite says is no better
        if predicted_gain_pct <= 0.0 {
            return Ok(exec);
        }
        let out = self.call(
            "deploy.canary",
            json!({
                "token": token,
                "policy": { "source": exec.source },
                "description": format!("{} [{}]", spec.description, plan.rationale),
                "config": { "goal": plan.goal },
            }),
        )?;
        exec.deployment_id = Some(field(&out, "deployment_id")?);
        exec.canary = Some(field(&out, "state")?);
        Ok(exec)
    }

    /// Feed one iteration back into the repository. The server has already
    /// recorded the canary outcome; this promotes winners, annotates
    /// reverts and decides what the next iteration should try.
    pub fn learn(&mut self, record: &IterationRecord) -> Result<(LearnAction, Hint), AgentError> {
        let (Some(dep), Some(policy_id), Some(phase)) = (&record.deployment_id, &record.policy_id, record.phase) else {
            if let Some(id) = record.plan.variant.policy_id() {
                self.excluded.insert(id.to_string());
            }
            return Ok((LearnAction::Nothing, Hint::TryAlternative));
        };
        if !self.learned.insert(dep.clone()) {
            return Err(AgentError::DuplicateDeployment(dep.clone()));
        }
        let gain = record.gain_pct.unwrap_or(0.0);
        match phase {
            CanaryPhase::Reverted => {
                let note = format!(
                    "reverted on {}: {:+.1}% {} against the live policy",
                    record.profile.family.as_str(),
                    -gain,
                    record.plan.goal.as_str()
                );
                self.call(
                    "repo.annotate",
                    json!({ "id": policy_id, "deployment_id": dep, "note": note }),
                )?;
                self.excluded.insert(policy_id.clone());
                if let Some(id) = record.plan.variant.policy_id() {
                    self.excluded.insert(id.to_string());
                }
                Ok((
                    LearnAction::Antipattern {
                        policy_id: policy_id.clone(),
                        note,
                    },
                    Hint::TryAlternative,
                ))
            }
            CanaryPhase::Promoted | CanaryPhase::Running => {
                let hint = if gain >= self.config.min_gain_pct {
                    Hint::Refine
                } else {
                    Hint::Converged
                };
                let out = self.call("repo.get", json!({ "id": policy_id }))?;
                let status: PolicyStatus = field(&out["record"], "status")?;
                if phase == CanaryPhase::Promoted && gain > 0.0 && status == PolicyStatus::Candidate {
                    self.call("repo.promote", json!({ "id": policy_id }))?;
                    return Ok((
                        LearnAction::Promoted {
                            policy_id: policy_id.clone(),
                        },
                        hint,
                    ));
                }
                Ok((
                    LearnAction::Recorded {
                        policy_id: policy_id.clone(),
                    },
                    hint,
                ))
            }
        }
    }

    /// Plan and execute, replanning when a plan turns out to reference a
    /// policy that can no longer be used.
    fn plan_and_execute(&mut self, profile: &WorkloadProfile) -> Result<(Plan, Result<Execution, AgentError>), AgentError> {
        const REPLANS: usize = 3;
        for _ in 0..REPLANS {
            let plan = self.plan(profile)?;
            match self.execute(&plan) {
                Err(AgentError::PlanInvalid { policy_id, .. }) => {
                    self.excluded.insert(policy_id);
                }
                other => return Ok((plan, other)),
            }
        }
        let plan = self.plan(profile)?;
        let result = self.execute(&plan);
        Ok((plan, result))
    }

    /// One full observe, plan, execute, learn pass.
    pub fn iterate(&mut self) -> Result<IterationRecord, AgentError> {
        let profile = self.observe()?;
        let goal = profile.optimization_goal;
        if self.baseline_metric.is_none() {
            self.baseline_metric = Some(self.live_metric(goal)?);
        }
        let (plan, result) = self.plan_and_execute(&profile)?;
        let (verdict, trail, exec) = match result {
            Ok(e) => (Verdict::Pass, e.trail.clone(), Some(e)),
            Err(AgentError::ExhaustedRefinements { trail }) => (Verdict::Fail, trail, None),
            Err(e) => return Err(e),
        };
        let canary = exec.as_ref().and_then(|e| e.canary.clone());
        let delta = canary.as_ref().and_then(|c| c.outcome_delta);
        let mut record = IterationRecord {
            iteration: self.history.len() as u32,
            profile,
            plan,
            verdict,
            trail,
            policy_id: exec.as_ref().map(|e| e.policy_id.clone()),
            deployment_id: exec.as_ref().and_then(|e| e.deployment_id.clone()),
            phase: canary.as_ref().map(|c| c.phase),
            delta,
            gain_pct: delta.map(|d| goal.improvement_pct(&d)),
            live_metric: self.live_metric(goal)?,
            action: LearnAction::Nothing,
            hint: Hint::Refine,
        };
        let (action, hint) = self.learn(&record)?;
        record.action = action;
        record.hint = hint;
        self.history.push(record.clone());
        Ok(record)
    }

    /// Iterate until a deployment gains less than `min_gain_pct` or
    /// `max_iters` runs out. Failed or reverted iterations move on to the
    /// next kind of plan rather than stopping.
    pub fn run_loop(&mut self, max_iters: u32) -> Result<Vec<IterationRecord>, AgentError> {
        let mut out = Vec::new();
        for _ in 0..max_iters {
            let r = self.iterate()?;
            let done = r.hint == Hint::Converged;
            out.push(r);
            if done {
                break;
            }
        }
        Ok(out)
    }
}
