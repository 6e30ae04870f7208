//! Staged policy validation, deployment tokens and canary rollout.
//!
//! Stage 1 checks a spec's structure, stage 2 hunts for starvation and
//! unfairness, stage 3 simulates it against a baseline. Only a passing
//! report yields a signed [`DeploymentToken`], and only a token starts a
//! [`Canary`].

mod canary;
mod dynamic;
mod starvation;
mod structural;
mod token;

pub use canary::{
    Canary, CanaryConfig, CanaryError, CanaryPhase, CanaryState, DegradedMeter, ReplaySource,
    SimMeter, WindowMeter, WindowSource,
};
pub use dynamic::{validate_dynamic, DynamicTarget, SuiteEntryResult};
pub use starvation::{
    analyze_starvation, check_wait_monotonicity, stress_suite, stress_workload, uniform_workload,
    StarvationConfig, BACKGROUND_TASK,
};
pub use structural::{verify_structural, MAX_DEPTH};
pub use token::{
    issue_token, verify_token, Clock, DeploymentToken, ManualClock, SystemClock, TokenError,
    DEFAULT_TTL_SECS,
};

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_hash, WorkloadSpec};
use crate::dsl::PolicySpec;
use crate::sim::{simulate_with, SimConfig, SimError, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    #[serde(rename = "DIVZERO")]
    DivZero,
    Depth,
    Unbound,
    ParamRange,
    SliceRange,
    SliceMissing,
    Nonfinite,
    Starvation,
    Unfair,
    TaskLost,
    SimViolation,
    SimError,
    PerfRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    pub message: String,
    /// Reproducer for the finding, such as the workload that triggered it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<serde_json::Value>,
}

impl Finding {
    pub fn error(code: FindingCode, message: String) -> Self {
        Finding {
            code,
            severity: Severity::Error,
            message,
            witness: None,
        }
    }

    pub fn warning(code: FindingCode, message: String) -> Self {
        Finding {
            severity: Severity::Warning,
            ..Self::error(code, message)
        }
    }

    pub fn with_witness(mut self, witness: serde_json::Value) -> Self {
        self.witness = Some(witness);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Structural,
    Starvation,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub passed: bool,
    pub findings: Vec<Finding>,
}

impl StageReport {
    fn from_findings(stage: Stage, findings: Vec<Finding>) -> Self {
        let passed = findings.iter().all(|f| f.severity != Severity::Error);
        StageReport {
            stage,
            passed,
            findings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub policy_id: String,
    pub policy_name: String,
    /// Stages that ran, in order; a failed stage is the last entry.
    pub stages: Vec<StageReport>,
    pub verdict: Verdict,
    pub suite_hash: String,
    pub baseline_id: String,
    pub suite_results: Vec<SuiteEntryResult>,
    pub config: VerifierConfig,
}

impl ValidationReport {
    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.stages.iter().flat_map(|s| s.findings.iter())
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings().any(|f| f.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub starvation: StarvationConfig,
    /// Largest goal-metric regression tolerated in stage 3, in percent.
    pub perf_threshold_pct: f64,
    pub seed: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            starvation: StarvationConfig::default(),
            perf_threshold_pct: 5.0,
            seed: 0,
        }
    }
}

/// Where candidate policies run. The simulator is the only shipped sandbox;
/// tests substitute faulty ones.
pub trait Sandbox: Send + Sync {
    fn run(&self, workload: &WorkloadSpec, policy: &PolicySpec, config: &SimConfig) -> Result<SimResult, SimError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimSandbox;

impl Sandbox for SimSandbox {
    fn run(&self, workload: &WorkloadSpec, policy: &PolicySpec, config: &SimConfig) -> Result<SimResult, SimError> {
        simulate_with(workload, policy, config)
    }
}

/// Hash binding a token to the workloads it was validated on.
pub fn suite_hash(suite: &[WorkloadSpec]) -> String {
    canonical_hash(&suite)
}

pub struct Verifier {
    pub config: VerifierConfig,
    sandbox: Box<dyn Sandbox>,
}

impl Default for Verifier {
    fn default() -> Self {
        Self::new(VerifierConfig::default())
    }
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Self {
        Self::with_sandbox(config, Box::new(SimSandbox))
    }

    pub fn with_sandbox(config: VerifierConfig, sandbox: Box<dyn Sandbox>) -> Self {
        Verifier { config, sandbox }
    }

    pub fn sandbox(&self) -> &dyn Sandbox {
        self.sandbox.as_ref()
    }

    /// Run the stages in order, stopping at the first that fails.
    pub fn run_pipeline(
        &self,
        spec: &PolicySpec,
        suite: &[WorkloadSpec],
        baseline: &PolicySpec,
        target: Option<DynamicTarget>,
    ) -> ValidationReport {
        let mut stages = Vec::new();
        let mut suite_results = Vec::new();
        let s1 = StageReport::from_findings(Stage::Structural, verify_structural(spec));
        let mut ok = s1.passed;
        stages.push(s1);
        if ok {
            let s2 = StageReport::from_findings(
                Stage::Starvation,
                analyze_starvation(spec, &self.config.starvation, self.sandbox()),
            );
            ok = s2.passed;
            stages.push(s2);
        }
        if ok {
            let (findings, results) = validate_dynamic(
                spec,
                suite,
                baseline,
                target,
                self.config.perf_threshold_pct,
                self.config.seed,
                self.sandbox(),
            );
            suite_results = results;
            let s3 = StageReport::from_findings(Stage::Dynamic, findings);
            ok = s3.passed;
            stages.push(s3);
        }
        ValidationReport {
            policy_id: spec.content_id(),
            policy_name: spec.name.clone(),
            stages,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            suite_hash: suite_hash(suite),
            baseline_id: baseline.content_id(),
            suite_results,
            config: self.config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Goal;
    use crate::dsl::{builtin, parse_expr};
    use crate::sim::gen_longtail_batch;

    fn longtail() -> Vec<WorkloadSpec> {
        vec![gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap()]
    }

    fn target() -> Option<DynamicTarget> {
        Some(DynamicTarget {
            family: crate::domain::Family::BatchLongtail,
            goal: Goal::MinAvgCompletion,
        })
    }

    #[test]
    fn pipeline_stops_at_first_failure() {
        let v = Verifier::default();
        let mut bad = builtin("fifo").unwrap();
        bad.priority = parse_expr("1 / exec_runtime").unwrap();
        let r = v.run_pipeline(&bad, &longtail(), &builtin("fair_vruntime").unwrap(), target());
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.stages.len(), 1);
        assert!(r.has(FindingCode::DivZero));

        let r = v.run_pipeline(&builtin("ljf").unwrap(), &longtail(), &builtin("fair_vruntime").unwrap(), target());
        assert_eq!(r.stages.len(), 2);
        assert!(r.has(FindingCode::Starvation));
        assert!(r.suite_results.is_empty());
    }

    #[test]
    fn aged_ljf_passes_all_stages() {
        let v = Verifier::default();
        let mut p = builtin("ljf").unwrap();
        p.priority = parse_expr("expected_runtime + 0.01 * wait_time").unwrap();
        let r = v.run_pipeline(&p, &longtail(), &builtin("fair_vruntime").unwrap(), target());
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.stages);
        assert_eq!(r.stages.len(), 3);
        assert_eq!(r.suite_hash, suite_hash(&longtail()));
        let d = r.suite_results[0].delta.unwrap();
        assert!(d.avg_completion_pct < 0.0);
    }

    #[test]
    fn finding_codes_serialize_in_caps() {
        assert_eq!(serde_json::to_string(&FindingCode::DivZero).unwrap(), "\"DIVZERO\"");
        assert_eq!(serde_json::to_string(&FindingCode::PerfRegression).unwrap(), "\"PERF_REGRESSION\"");
        assert_eq!(serde_json::to_string(&FindingCode::TaskLost).unwrap(), "\"TASK_LOST\"");
    }
}
