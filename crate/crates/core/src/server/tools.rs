//! Tool descriptors and their JSON schemas.

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{PROBE_COST, SUMMARY_COST};

pub const SIMULATE_COST: u64 = 20;
pub const VERIFY_COST: u64 = 50;

/// How a tool is billed against the session's cost cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    Free,
    Summary,
    /// Charged per distinct probe requested.
    Probe,
    Simulate,
    Verify,
}

impl CostClass {
    pub fn units(self, probes: usize) -> u64 {
        match self {
            CostClass::Free => 0,
            CostClass::Summary => SUMMARY_COST,
            CostClass::Probe => PROBE_COST * probes as u64,
            CostClass::Simulate => SIMULATE_COST,
            CostClass::Verify => VERIFY_COST,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToolDescriptor {
    pub name: &'static str,
    pub description: &'static str,
    #[serde(rename = "inputSchema")]
    pub input_schema: Value,
    #[serde(rename = "outputSchema")]
    pub output_schema: Value,
    pub cost_class: CostClass,
    /// A valid input, handy for clients and checked against the schema.
    pub example: Value,
}

fn obj(required: &[&str], props: Value) -> Value {
    json!({
        "type": "object",
        "required": required,
        "properties": props,
        "additionalProperties": false,
    })
}

fn open_obj(required: &[&str], props: Value) -> Value {
    json!({ "type": "object", "required": required, "properties": props })
}

fn session() -> Value {
    json!({ "type": "string", "minLength": 1 })
}

fn uint() -> Value {
    json!({ "type": "integer", "minimum": 0 })
}

fn family() -> Value {
    json!({ "enum": ["build-dag", "latency-chain", "batch-longtail", "custom"] })
}

fn goal() -> Value {
    json!({ "enum": ["min_makespan", "min_p99", "min_avg_completion", "max_throughput"] })
}

fn status() -> Value {
    json!({ "enum": ["candidate", "promoted", "retired"] })
}

fn task() -> Value {
    obj(
        &["id", "arrival_time", "total_work", "weight"],
        json!({
            "id": uint(),
            "arrival_time": uint(),
            "total_work": { "type": "integer", "minimum": 1 },
            "expected_runtime_hint": { "type": ["integer", "null"], "minimum": 0 },
            "weight": { "type": "integer", "minimum": 1, "maximum": 10000 },
            "deps": { "type": "array", "items": uint() },
            "wake_targets": { "type": "array", "items": uint() },
        }),
    )
}

pub fn workload() -> Value {
    obj(
        &["name", "family", "tasks", "core_count", "seed"],
        json!({
            "name": { "type": "string" },
            "family": family(),
            "tasks": { "type": "array", "minItems": 1, "items": task() },
            "core_count": { "type": "integer", "minimum": 1 },
            "seed": uint(),
            "horizon": { "type": ["integer", "null"], "minimum": 1 },
        }),
    )
}

/// A policy named by repository/builtin name, repository id or DSL source.
fn policy_ref() -> Value {
    json!({
        "type": "object",
        "minProperties": 1,
        "maxProperties": 1,
        "additionalProperties": false,
        "properties": {
            "name": { "type": "string", "minLength": 1 },
            "id": { "type": "string", "minLength": 1 },
            "source": { "type": "string", "minLength": 1 },
        },
    })
}

fn token() -> Value {
    obj(
        &["policy_id", "suite_hash", "issued_at", "ttl", "mac"],
        json!({
            "policy_id": { "type": "string" },
            "suite_hash": { "type": "string" },
            "issued_at": uint(),
            "ttl": uint(),
            "mac": { "type": "string" },
        }),
    )
}

fn delta() -> Value {
    obj(
        &["throughput_pct", "p99_pct", "makespan_pct", "avg_completion_pct"],
        json!({
            "throughput_pct": { "type": "number" },
            "p99_pct": { "type": "number" },
            "makespan_pct": { "type": "number" },
            "avg_completion_pct": { "type": "number" },
        }),
    )
}

fn policy_out() -> Value {
    obj(
        &["id", "name", "source"],
        json!({
            "id": { "type": "string" },
            "name": { "type": "string" },
            "source": { "type": "string" },
        }),
    )
}

fn record_brief() -> Value {
    obj(
        &["id", "name", "status", "outcomes", "antipatterns"],
        json!({
            "id": { "type": "string" },
            "name": { "type": "string" },
            "status": status(),
            "outcomes": uint(),
            "antipatterns": uint(),
        }),
    )
}

fn canary_state() -> Value {
    open_obj(
        &["deployment_id", "phase", "consecutive_trips", "windows_completed", "baseline_policy_id", "active_policy_id"],
        json!({
            "deployment_id": { "type": "string" },
            "phase": { "enum": ["running", "promoted", "reverted"] },
            "consecutive_trips": uint(),
            "windows_completed": uint(),
            "baseline_policy_id": { "type": "string" },
            "active_policy_id": { "type": "string" },
        }),
    )
}

fn sample_workload() -> Value {
    json!({
        "name": "pair",
        "family": "custom",
        "tasks": [
            { "id": 0, "arrival_time": 0, "total_work": 1000, "weight": 1024 },
            { "id": 1, "arrival_time": 0, "total_work": 3000, "weight": 1024 },
        ],
        "core_count": 1,
        "seed": 0,
    })
}

/// All tools, in the stable order `tools/list` returns them.
pub fn descriptors() -> Vec<ToolDescriptor> {
    let d = |name, description, input_schema, output_schema, cost_class, example| ToolDescriptor {
        name,
        description,
        input_schema,
        output_schema,
        cost_class,
        example,
    };
    vec![
        d(
            "session.open",
            "Open a session bound to a workload. The validation suite defaults to that workload.",
            obj(
                &["workload"],
                json!({
                    "workload": workload(),
                    "suite": { "type": "array", "minItems": 1, "items": workload() },
                    "cost_cap": uint(),
                    "context_budget": { "type": "integer", "minimum": 128 },
                }),
            ),
            obj(
                &["session", "workload", "cost_cap", "context_budget", "suite_hash"],
                json!({
                    "session": session(),
                    "workload": { "type": "string" },
                    "cost_cap": uint(),
                    "context_budget": uint(),
                    "suite_hash": { "type": "string" },
                }),
            ),
            CostClass::Free,
            json!({ "workload": sample_workload() }),
        ),
        d(
            "session.status",
            "Cost, budget, active policy and deployments of a session.",
            obj(&["session"], json!({ "session": session() })),
            obj(
                &["session", "cost", "cost_cap", "context_budget", "active_policy", "deployments"],
                json!({
                    "session": session(),
                    "cost": uint(),
                    "cost_cap": uint(),
                    "context_budget": uint(),
                    "active_policy": policy_out(),
                    "deployments": { "type": "array", "items": { "type": "string" } },
                }),
            ),
            CostClass::Free,
            json!({ "session": "s-1" }),
        ),
        d(
            "session.close",
            "Close a session.",
            obj(&["session"], json!({ "session": session() })),
            obj(&["closed"], json!({ "closed": { "type": "boolean" } })),
            CostClass::Free,
            json!({ "session": "s-1" }),
        ),
        d(
            "summarize",
            "Tier-1 workload summary rendered within a byte budget (at most the session's context budget).",
            obj(
                &["session"],
                json!({ "session": session(), "budget": { "type": "integer", "minimum": 0 } }),
            ),
            open_obj(
                &["family", "task_count", "core_count", "text", "truncated"],
                json!({
                    "family": family(),
                    "task_count": uint(),
                    "core_count": uint(),
                    "text": { "type": "string" },
                    "truncated": { "type": "array", "items": { "type": "string" } },
                }),
            ),
            CostClass::Summary,
            json!({ "session": "s-1", "budget": 512 }),
        ),
        d(
            "profile_deep",
            "Tier-2 probes over the bound workload: durations, dag, wakeups.",
            obj(
                &["session", "probes"],
                json!({
                    "session": session(),
                    "probes": { "type": "array", "minItems": 1, "items": { "type": "string" } },
                }),
            ),
            obj(
                &[],
                json!({
                    "durations": { "type": "object" },
                    "dag": { "type": "object" },
                    "wakeups": { "type": "object" },
                }),
            ),
            CostClass::Probe,
            json!({ "session": "s-1", "probes": ["durations"] }),
        ),
        d(
            "classify",
            "Map a summary, and optionally a probe report, to a workload profile.",
            obj(
                &["session", "summary"],
                json!({
                    "session": session(),
                    "summary": { "type": "object" },
                    "report": { "type": "object" },
                }),
            ),
            obj(
                &["description", "family", "optimization_goal", "confidence", "fingerprint"],
                json!({
                    "description": { "type": "string" },
                    "family": family(),
                    "optimization_goal": goal(),
                    "confidence": { "type": "number", "minimum": 0, "maximum": 1 },
                    "fingerprint": { "type": "string" },
                }),
            ),
            CostClass::Free,
            json!({
                "session": "s-1",
                "summary": {
                    "family": "custom", "task_count": 2, "core_count": 1, "arrival_span": 0,
                    "histogram": { "min": 1000, "max": 3000, "counts": [1, 0, 0, 0, 0, 0, 0, 1], "shape": "bimodal" },
                    "parallelism": 2, "load": 1.0, "text": "family: custom", "truncated": [],
                },
            }),
        ),
        d(
            "simulate",
            "Run one policy on the session workload.",
            obj(
                &["session", "policy"],
                json!({ "session": session(), "policy": policy_ref(), "seed": uint() }),
            ),
            obj(
                &["policy", "complete", "metrics", "violations", "end_time"],
                json!({
                    "policy": policy_out(),
                    "complete": { "type": "boolean" },
                    "metrics": { "type": ["object", "null"] },
                    "violations": uint(),
                    "end_time": uint(),
                }),
            ),
            CostClass::Simulate,
            json!({ "session": "s-1", "policy": { "name": "fifo" } }),
        ),
        d(
            "repo.search",
            "BM25 search over policy descriptions, tags and target families.",
            obj(
                &["session", "query"],
                json!({
                    "session": session(),
                    "query": { "type": "string", "minLength": 1 },
                    "k": { "type": "integer", "minimum": 1, "maximum": 100 },
                }),
            ),
            obj(
                &["hits"],
                json!({
                    "hits": {
                        "type": "array",
                        "items": obj(
                            &["id", "name", "description", "status", "target_families", "score", "normalized", "source"],
                            json!({
                                "id": { "type": "string" },
                                "name": { "type": "string" },
                                "description": { "type": "string" },
                                "status": status(),
                                "target_families": { "type": "array", "items": family() },
                                "score": { "type": "number" },
                                "normalized": { "type": "number" },
                                "source": { "type": "string" },
                            }),
                        ),
                    },
                }),
            ),
            CostClass::Free,
            json!({ "session": "s-1", "query": "long job batch", "k": 3 }),
        ),
        d(
            "repo.get",
            "Fetch one policy record.",
            obj(&["session", "id"], json!({ "session": session(), "id": { "type": "string" } })),
            obj(&["record", "source"], json!({ "record": { "type": "object" }, "source": { "type": "string" } })),
            CostClass::Free,
            json!({ "session": "s-1", "id": "0000" }),
        ),
        d(
            "repo.add",
            "Store a policy as a candidate; idempotent on content.",
            obj(
                &["session", "policy"],
                json!({
                    "session": session(),
                    "policy": policy_ref(),
                    "description": { "type": "string" },
                    "target_families": { "type": "array", "items": family() },
                }),
            ),
            record_brief(),
            CostClass::Free,
            json!({ "session": "s-1", "policy": { "source": "name = arrival\npriority = -arrival_time\n" } }),
        ),
        d(
            "repo.record_outcome",
            "Append a deployment outcome to a policy's history.",
            obj(
                &["session", "id", "deployment_id", "goal", "delta"],
                json!({
                    "session": session(),
                    "id": { "type": "string" },
                    "deployment_id": { "type": "string", "minLength": 1 },
                    "goal": goal(),
                    "delta": delta(),
                    "fingerprint": { "type": "string" },
                }),
            ),
            record_brief(),
            CostClass::Free,
            json!({
                "session": "s-1", "id": "0000", "deployment_id": "dep-1", "goal": "min_p99",
                "delta": { "throughput_pct": 0.0, "p99_pct": -12.0, "makespan_pct": 0.0, "avg_completion_pct": 0.0 },
            }),
        ),
        d(
            "repo.promote",
            "Promote a candidate that has a positive outcome.",
            obj(&["session", "id"], json!({ "session": session(), "id": { "type": "string" } })),
            record_brief(),
            CostClass::Free,
            json!({ "session": "s-1", "id": "0000" }),
        ),
        d(
            "repo.annotate",
            "Attach an antipattern note from a failed deployment.",
            obj(
                &["session", "id", "deployment_id", "note"],
                json!({
                    "session": session(),
                    "id": { "type": "string" },
                    "deployment_id": { "type": "string", "minLength": 1 },
                    "note": { "type": "string" },
                }),
            ),
            record_brief(),
            CostClass::Free,
            json!({ "session": "s-1", "id": "0000", "deployment_id": "dep-1", "note": "reverted" }),
        ),
        d(
            "verify.pipeline",
            "Structural, starvation and dynamic validation on the session suite; a pass returns a deployment token.",
            obj(
                &["session", "policy"],
                json!({
                    "session": session(),
                    "policy": policy_ref(),
                    "baseline": policy_ref(),
                    "goal": goal(),
                }),
            ),
            obj(
                &["verdict", "policy", "suite_hash", "report", "token"],
                json!({
                    "verdict": { "enum": ["pass", "fail"] },
                    "policy": policy_out(),
                    "suite_hash": { "type": "string" },
                    "report": { "type": "object" },
                    "token": { "oneOf": [token(), { "type": "null" }] },
                }),
            ),
            CostClass::Verify,
            json!({ "session": "s-1", "policy": { "name": "ljf" } }),
        ),
        d(
            "deploy.canary",
            "Deploy a validated policy under canary supervision. Requires the token from verify.pipeline.",
            obj(
                &["session", "token", "policy"],
                json!({
                    "session": session(),
                    "token": token(),
                    "policy": policy_ref(),
                    "description": { "type": "string" },
                    "config": obj(
                        &[],
                        json!({
                            "window_size": { "type": "integer", "minimum": 1 },
                            "threshold_pct": { "type": "number", "exclusiveMinimum": 0 },
                            "trip_limit": { "type": "integer", "minimum": 1 },
                            "windows": { "type": "integer", "minimum": 1 },
                            "goal": goal(),
                        }),
                    ),
                }),
            ),
            obj(
                &["deployment_id", "policy", "state", "outcome_recorded"],
                json!({
                    "deployment_id": { "type": "string" },
                    "policy": policy_out(),
                    "state": canary_state(),
                    "outcome_recorded": { "type": "boolean" },
                }),
            ),
            CostClass::Free,
            json!({
                "session": "s-1",
                "token": { "policy_id": "p", "suite_hash": "h", "issued_at": 0, "ttl": 60, "mac": "AAAA" },
                "policy": { "name": "ljf" },
            }),
        ),
        d(
            "deploy.status",
            "Current canary state of a deployment.",
            obj(
                &["session", "deployment_id"],
                json!({ "session": session(), "deployment_id": { "type": "string" } }),
            ),
            obj(&["state"], json!({ "state": canary_state() })),
            CostClass::Free,
            json!({ "session": "s-1", "deployment_id": "dep-000001" }),
        ),
        d(
            "feedback.report",
            "Candidate-versus-baseline delta over a deployment's measured windows.",
            obj(
                &["session", "deployment_id"],
                json!({ "session": session(), "deployment_id": { "type": "string" } }),
            ),
            obj(
                &["deployment_id", "delta", "closed"],
                json!({ "deployment_id": { "type": "string" }, "delta": delta(), "closed": { "type": "boolean" } }),
            ),
            CostClass::Free,
            json!({ "session": "s-1", "deployment_id": "dep-000001" }),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_validate_against_their_schemas() {
        for d in descriptors() {
            let v = jsonschema::validator_for(&d.input_schema).unwrap();
            assert!(v.is_valid(&d.example), "{}", d.name);
            jsonschema::validator_for(&d.output_schema).unwrap();
        }
    }

    #[test]
    fn names_are_unique_and_cover_the_contract() {
        let names: Vec<&str> = descriptors().iter().map(|d| d.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        for need in [
            "summarize",
            "profile_deep",
            "classify",
            "repo.search",
            "repo.add",
            "repo.record_outcome",
            "repo.promote",
            "verify.pipeline",
            "deploy.canary",
            "feedback.report",
        ] {
            assert!(names.contains(&need), "{need}");
        }
    }

    #[test]
    fn cost_classes() {
        assert_eq!(CostClass::Summary.units(0), 1);
        assert_eq!(CostClass::Probe.units(3), 15);
        assert_eq!(CostClass::Simulate.units(0), 20);
        assert_eq!(CostClass::Verify.units(0), 50);
        assert_eq!(CostClass::Free.units(9), 0);
    }
}
