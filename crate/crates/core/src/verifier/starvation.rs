use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Finding, FindingCode, Sandbox};
use crate::domain::{Family, Micros, TaskId, TaskRuntimeState, TaskSpec, WorkloadSpec, MICROS_PER_SEC};
use crate::dsl::{BoundPolicy, Feature, PolicySpec};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarvationConfig {
    /// Longest single wait the background task may see in a stress run.
    pub bound: Micros,
    pub horizon: Micros,
    pub samples: usize,
    pub seed: u64,
    pub fairness_floor: f64,
}

impl Default for StarvationConfig {
    fn default() -> Self {
        StarvationConfig {
            bound: 10 * MICROS_PER_SEC,
            horizon: 60 * MICROS_PER_SEC,
            samples: 1000,
            seed: 0x5eed,
            fairness_floor: 0.5,
        }
    }
}

pub const BACKGROUND_TASK: TaskId = TaskId(0);
const BACKGROUND_WEIGHT: u32 = 100;
const BACKGROUND_WORK: Micros = 50_000;

/// One core, a low-weight background task arriving at 1 ms, and a stream of
/// back-to-back jobs of `job_work` each arriving every `job_work`, so a fresh
/// stream job is always queued when the core frees up.
pub fn stress_workload(name: &str, job_work: Micros, horizon: Micros) -> WorkloadSpec {
    let mut bg = TaskSpec::new(BACKGROUND_TASK.0, 1_000, BACKGROUND_WORK);
    bg.weight = BACKGROUND_WEIGHT;
    let jobs = (horizon / job_work) as u32;
    let tasks = std::iter::once(bg)
        .chain((0..jobs).map(|k| TaskSpec::new(k + 1, Micros::from(k) * job_work, job_work)))
        .collect();
    WorkloadSpec {
        name: name.to_string(),
        family: Family::Custom,
        tasks,
        core_count: 1,
        seed: 0,
        horizon: Some(horizon),
    }
}

/// Streams of jobs longer and shorter than the background task, so both
/// long-first and short-first orderings meet an adversary.
pub fn stress_suite(horizon: Micros) -> Vec<WorkloadSpec> {
    vec![
        stress_workload("stress-long-stream", 100_000, horizon),
        stress_workload("stress-short-stream", 10_000, horizon),
    ]
}

/// 16 identical tasks on 4 cores.
pub fn uniform_workload() -> WorkloadSpec {
    WorkloadSpec {
        name: "uniform-16".into(),
        family: Family::Custom,
        tasks: (0..16).map(|i| TaskSpec::new(i, 0, 100_000)).collect(),
        core_count: 4,
        seed: 0,
        horizon: None,
    }
}

fn fifo_ordered(spec: &PolicySpec) -> bool {
    !spec.preemptive && spec.priority.features().into_iter().all(|f| f == Feature::ArrivalTime)
}

fn random_state(rng: &mut ChaCha8Rng) -> TaskRuntimeState {
    const T: u64 = 1_000_000_000;
    let arrival = rng.random_range(0..=T);
    let enqueue = arrival + rng.random_range(0..=T);
    let wait = rng.random_range(0..=T);
    TaskRuntimeState {
        arrival_time: arrival,
        enqueue_time: enqueue,
        wait_time: wait,
        exec_runtime: rng.random_range(0..=T),
        vruntime: rng.random_range(0.0..1e10),
        expected_runtime: rng.random_range(0..=T),
        weight: rng.random_range(1..=10_000),
        wakeup_count: rng.random_range(0..=1_000),
        now: enqueue + wait,
    }
}

/// Priority must not drop as a task keeps waiting.
pub fn check_wait_monotonicity(spec: &PolicySpec, config: &StarvationConfig) -> Option<Finding> {
    if fifo_ordered(spec) {
        return None;
    }
    let policy = BoundPolicy::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    const STEPS: [Micros; 3] = [1_000, MICROS_PER_SEC, 60 * MICROS_PER_SEC];
    for i in 0..config.samples {
        let s = random_state(&mut rng);
        let step = STEPS[i % STEPS.len()];
        let later = TaskRuntimeState {
            wait_time: s.wait_time + step,
            now: s.now + step,
            ..s
        };
        let (Ok(a), Ok(b)) = (policy.priority(&s), policy.priority(&later)) else {
            continue;
        };
        if b < a - 1e-9 * a.abs().max(1.0) {
            return Some(
                Finding::error(
                    FindingCode::Starvation,
                    format!("priority falls from {a} to {b} after waiting {step}us more"),
                )
                .with_witness(serde_json::json!({ "state": s, "later": later })),
            );
        }
    }
    None
}

/// Stage 2: wait monotonicity, adversarial stress runs and a fairness floor.
pub fn analyze_starvation(spec: &PolicySpec, config: &StarvationConfig, sandbox: &dyn Sandbox) -> Vec<Finding> {
    let mut out = Vec::new();
    if let Some(f) = check_wait_monotonicity(spec, config) {
        out.push(f);
    }
    let sim = SimConfig::seeded(config.seed);
    for w in stress_suite(config.horizon) {
        match sandbox.run(&w, spec, &sim) {
            Ok(r) => {
                let wait = r.max_wait_of(BACKGROUND_TASK).unwrap_or(0);
                if wait >= config.bound {
                    out.push(
                        Finding::error(
                            FindingCode::Starvation,
                            format!(
                                "background task waited {wait}us on {} (bound {}us)",
                                w.name, config.bound
                            ),
                        )
                        .with_witness(serde_json::json!({ "workload": w, "max_wait": wait })),
                    );
                }
            }
            Err(e) => out.push(Finding::error(FindingCode::SimError, format!("{}: {e}", w.name))),
        }
    }
    let w = uniform_workload();
    match sandbox.run(&w, spec, &sim) {
        Ok(r) => match &r.metrics {
            Some(m) if m.jain_fairness >= config.fairness_floor => {}
            Some(m) => out.push(
                Finding::error(
                    FindingCode::Unfair,
                    format!("jain fairness {:.3} below {}", m.jain_fairness, config.fairness_floor),
                )
                .with_witness(serde_json::json!({ "workload": w })),
            ),
            None => out.push(Finding::error(FindingCode::TaskLost, "uniform workload completed nothing".into())),
        },
        Err(e) => out.push(Finding::error(FindingCode::SimError, format!("{}: {e}", w.name))),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::SimSandbox;
    use super::*;
    use crate::dsl::{builtin, parse_expr};

    fn codes(spec: &PolicySpec) -> Vec<FindingCode> {
        analyze_starvation(spec, &StarvationConfig::default(), &SimSandbox)
            .into_iter()
            .map(|f| f.code)
            .collect()
    }

    #[test]
    fn decreasing_in_wait_is_flagged() {
        let mut p = builtin("fifo").unwrap();
        p.priority = parse_expr("expected_runtime - wait_time").unwrap();
        assert!(check_wait_monotonicity(&p, &StarvationConfig::default()).is_some());
        p.priority = parse_expr("expected_runtime + 0.01 * wait_time").unwrap();
        assert!(check_wait_monotonicity(&p, &StarvationConfig::default()).is_none());
    }

    #[test]
    fn stress_workload_shape() {
        let w = stress_workload("s", 100_000, 60 * MICROS_PER_SEC);
        assert_eq!(w.tasks.len(), 601);
        assert_eq!(w.tasks[0].weight, 100);
        w.validate().unwrap();
    }

    #[test]
    fn pure_ljf_starves_with_witness() {
        let findings = analyze_starvation(&builtin("ljf").unwrap(), &StarvationConfig::default(), &SimSandbox);
        let f = findings.iter().find(|f| f.code == FindingCode::Starvation).unwrap();
        assert!(f.witness.as_ref().unwrap().get("workload").is_some());
    }

    #[test]
    fn aged_ljf_and_fair_pass() {
        let mut p = builtin("ljf").unwrap();
        p.priority = parse_expr("expected_runtime + 0.01 * wait_time").unwrap();
        assert!(codes(&p).is_empty());
        assert!(codes(&builtin("fair_vruntime").unwrap()).is_empty());
    }
}
