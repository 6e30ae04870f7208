use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::token::{verify_token, DeploymentToken, TokenError};
use crate::analysis::{AnalysisError, FeedbackLedger, WindowSide};
use crate::domain::{compute_delta, Goal, MetricsError, MetricsReport, PerformanceDelta, WorkloadSpec};
use crate::dsl::PolicySpec;
use crate::repo::OutcomeRecord;
use crate::sim::{simulate_with, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryConfig {
    /// Tasks per measurement window.
    pub window_size: u32,
    pub threshold_pct: f64,
    /// Consecutive tripping windows that force a revert.
    pub trip_limit: u32,
    /// Windows a candidate must survive to be promoted.
    pub windows: u32,
    pub goal: Goal,
}

impl CanaryConfig {
    pub fn for_goal(goal: Goal) -> Self {
        CanaryConfig {
            goal,
            ..Self::default()
        }
    }
}

impl Default for CanaryConfig {
    fn default() -> Self {
        CanaryConfig {
            window_size: 40,
            threshold_pct: 10.0,
            trip_limit: 3,
            windows: 10,
            goal: Goal::MinP99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanaryPhase {
    Running,
    Promoted,
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryState {
    pub deployment_id: String,
    pub phase: CanaryPhase,
    pub window_size: u32,
    pub threshold_pct: f64,
    pub trip_limit: u32,
    pub windows_target: u32,
    pub goal: Goal,
    pub consecutive_trips: u32,
    pub windows_completed: u32,
    pub baseline_policy_id: String,
    pub candidate_policy_id: String,
    /// Policy serving the workload right now.
    pub active_policy_id: String,
    /// Candidate-versus-baseline delta of each paired window.
    pub window_deltas: Vec<PerformanceDelta>,
    /// Delta recorded as the deployment's outcome once it finishes.
    pub outcome_delta: Option<PerformanceDelta>,
    pub reason: Option<String>,
}

#[derive(Debug, Error)]
pub enum CanaryError {
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("token was issued for policy {token}, not {candidate}")]
    PolicyMismatch { token: String, candidate: String },
    #[error("deployment {0} already finished")]
    NotRunning(String),
    #[error("window {window}: {source}")]
    Sim { window: u32, source: SimError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ledger(#[from] AnalysisError),
}

/// Supplies the workload of each measurement window.
pub trait WindowSource: Send + Sync {
    fn window(&self, index: u32, window_size: u32) -> WorkloadSpec;
}

/// Replays one recorded workload in every window.
#[derive(Debug, Clone)]
pub struct ReplaySource(pub WorkloadSpec);

impl WindowSource for ReplaySource {
    fn window(&self, _index: u32, _window_size: u32) -> WorkloadSpec {
        self.0.clone()
    }
}

impl<F> WindowSource for F
where
    F: Fn(u32, u32) -> WorkloadSpec + Send + Sync,
{
    fn window(&self, index: u32, window_size: u32) -> WorkloadSpec {
        self(index, window_size)
    }
}

/// Measures one side of one window.
pub trait WindowMeter: Send + Sync {
    fn measure(&self, side: WindowSide, policy: &PolicySpec, workload: &WorkloadSpec, index: u32)
        -> Result<MetricsReport, CanaryError>;
}

/// Runs the window in the simulator. Both sides of a window share a seed so
/// the comparison stays paired.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimMeter {
    pub hint_noise: f64,
}

impl WindowMeter for SimMeter {
    fn measure(&self, _side: WindowSide, policy: &PolicySpec, workload: &WorkloadSpec, index: u32)
        -> Result<MetricsReport, CanaryError> {
        let cfg = SimConfig {
            hint_noise: self.hint_noise,
            ..SimConfig::seeded(workload.seed ^ u64::from(index))
        };
        let r = simulate_with(workload, policy, &cfg).map_err(|source| CanaryError::Sim { window: index, source })?;
        r.metrics().cloned().map_err(|source| CanaryError::Sim { window: index, source })
    }
}

/// Scales the candidate's tail latency, for rehearsing a bad rollout.
#[derive(Debug, Clone, Copy)]
pub struct DegradedMeter<M> {
    pub inner: M,
    pub p99_factor: f64,
}

impl<M: WindowMeter> WindowMeter for DegradedMeter<M> {
    fn measure(&self, side: WindowSide, policy: &PolicySpec, workload: &WorkloadSpec, index: u32)
        -> Result<MetricsReport, CanaryError> {
        let mut m = self.inner.measure(side, policy, workload, index)?;
        if side == WindowSide::Candidate {
            m.latency_p99 = (m.latency_p99 as f64 * self.p99_factor).round() as u64;
        }
        Ok(m)
    }
}

/// One deployment under supervision. Each step measures a baseline window
/// and then a candidate window on the same workload and compares them.
#[derive(Debug, Clone)]
pub struct Canary {
    state: CanaryState,
    baseline: PolicySpec,
    candidate: PolicySpec,
    base_windows: Vec<MetricsReport>,
    cand_windows: Vec<MetricsReport>,
    streak: Vec<usize>,
}

impl Canary {
    /// Admit a candidate. The token must verify, name this candidate and
    /// carry the hash of the suite the caller expects.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        token: &DeploymentToken,
        key: &[u8],
        now: u64,
        suite_hash: &str,
        candidate: PolicySpec,
        baseline: PolicySpec,
        deployment_id: &str,
        config: &CanaryConfig,
    ) -> Result<Self, CanaryError> {
        verify_token(token, key, now)?;
        let candidate_id = candidate.content_id();
        if token.policy_id != candidate_id {
            return Err(CanaryError::PolicyMismatch {
                token: token.policy_id.clone(),
                candidate: candidate_id,
            });
        }
        if token.suite_hash != suite_hash {
            return Err(TokenError::TokenSuiteMismatch.into());
        }
        let baseline_id = baseline.content_id();
        Ok(Canary {
            state: CanaryState {
                deployment_id: deployment_id.to_string(),
                phase: CanaryPhase::Running,
                window_size: config.window_size,
                threshold_pct: config.threshold_pct,
                trip_limit: config.trip_limit.max(1),
                windows_target: config.windows.max(1),
                goal: config.goal,
                consecutive_trips: 0,
                windows_completed: 0,
                baseline_policy_id: baseline_id,
                active_policy_id: candidate_id.clone(),
                candidate_policy_id: candidate_id,
                window_deltas: Vec::new(),
                outcome_delta: None,
                reason: None,
            },
            baseline,
            candidate,
            base_windows: Vec::new(),
            cand_windows: Vec::new(),
            streak: Vec::new(),
        })
    }

    pub fn state(&self) -> &CanaryState {
        &self.state
    }

    pub fn candidate(&self) -> &PolicySpec {
        &self.candidate
    }

    pub fn baseline(&self) -> &PolicySpec {
        &self.baseline
    }

    pub fn is_running(&self) -> bool {
        self.state.phase == CanaryPhase::Running
    }

    fn mean_delta(&self, idx: &[usize]) -> Result<PerformanceDelta, CanaryError> {
        let pick = |v: &[MetricsReport]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let c = MetricsReport::mean(&pick(&self.cand_windows)).ok_or(MetricsError::EmptyTrace)?;
        let b = MetricsReport::mean(&pick(&self.base_windows)).ok_or(MetricsError::EmptyTrace)?;
        Ok(compute_delta(&c, &b)?)
    }

    fn finish(&mut self, phase: CanaryPhase, delta: PerformanceDelta, reason: String, ledger: Option<&mut FeedbackLedger>)
        -> Result<(), CanaryError> {
        self.state.phase = phase;
        self.state.active_policy_id = match phase {
            CanaryPhase::Reverted => self.state.baseline_policy_id.clone(),
            _ => self.state.candidate_policy_id.clone(),
        };
        self.state.outcome_delta = Some(delta);
        self.state.reason = Some(reason);
        if let Some(l) = ledger {
            l.close(&self.state.deployment_id)?;
        }
        Ok(())
    }

    /// Measure one paired window and apply the breaker. When a ledger is
    /// given, the deployment is opened in it on the first window and closed
    /// when the canary finishes.
    pub fn step(
        &mut self,
        source: &dyn WindowSource,
        meter: &dyn WindowMeter,
        mut ledger: Option<&mut FeedbackLedger>,
    ) -> Result<&CanaryState, CanaryError> {
        if !self.is_running() {
            return Err(CanaryError::NotRunning(self.state.deployment_id.clone()));
        }
        let i = self.state.windows_completed;
        let w = source.window(i, self.state.window_size);
        let b = meter.measure(WindowSide::Baseline, &self.baseline, &w, i)?;
        let c = meter.measure(WindowSide::Candidate, &self.candidate, &w, i)?;
        let delta = compute_delta(&c, &b)?;
        if let Some(l) = ledger.as_deref_mut() {
            if i == 0 {
                l.open(&self.state.deployment_id)?;
            }
            l.record(&self.state.deployment_id, WindowSide::Baseline, b.clone())?;
            l.record(&self.state.deployment_id, WindowSide::Candidate, c.clone())?;
        }
        self.base_windows.push(b);
        self.cand_windows.push(c);
        self.state.window_deltas.push(delta);
        self.state.windows_completed += 1;

        let worse = self.state.goal.degradation_pct(&delta);
        if worse > self.state.threshold_pct {
            self.state.consecutive_trips += 1;
            self.streak.push(i as usize);
        } else {
            self.state.consecutive_trips = 0;
            self.streak.clear();
        }

        let goal = self.state.goal.as_str();
        if self.state.consecutive_trips >= self.state.trip_limit {
            let d = self.mean_delta(&self.streak.clone())?;
            let reason = format!(
                "{} consecutive windows degraded {goal} beyond {}%",
                self.state.consecutive_trips, self.state.threshold_pct
            );
            self.finish(CanaryPhase::Reverted, d, reason, ledger)?;
        } else if self.state.windows_completed >= self.state.windows_target {
            let all: Vec<usize> = (0..self.cand_windows.len()).collect();
            let d = self.mean_delta(&all)?;
            let overall = self.state.goal.degradation_pct(&d);
            if overall > self.state.threshold_pct {
                let reason = format!("mean {goal} degraded {overall:.1}% over all windows");
                self.finish(CanaryPhase::Reverted, d, reason, ledger)?;
            } else {
                let reason = format!("survived {} windows", self.state.windows_completed);
                self.finish(CanaryPhase::Promoted, d, reason, ledger)?;
            }
        }
        Ok(&self.state)
    }

    /// Step until the canary finishes.
    pub fn run(
        &mut self,
        source: &dyn WindowSource,
        meter: &dyn WindowMeter,
        mut ledger: Option<&mut FeedbackLedger>,
    ) -> Result<&CanaryState, CanaryError> {
        while self.is_running() {
            self.step(source, meter, ledger.as_deref_mut())?;
        }
        Ok(&self.state)
    }

    /// Outcome to file with the repository once the canary has finished.
    pub fn outcome(&self, fingerprint: &str, timestamp: u64) -> Option<OutcomeRecord> {
        Some(OutcomeRecord {
            fingerprint: fingerprint.to_string(),
            goal: self.state.goal,
            delta: self.state.outcome_delta?,
            timestamp,
            deployment_id: self.state.deployment_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::token::issue_token;
    use super::super::{suite_hash, Verifier};
    use super::*;
    use crate::dsl::{builtin, parse_expr};
    use crate::sim::gen_longtail_batch;

    const KEY: &[u8] = b"canary-key";

    fn suite() -> Vec<WorkloadSpec> {
        vec![gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap()]
    }

    fn admitted(candidate: PolicySpec, cfg: &CanaryConfig) -> Canary {
        let fair = builtin("fair_vruntime").unwrap();
        let report = Verifier::default().run_pipeline(&candidate, &suite(), &fair, None);
        let token = issue_token(&report, KEY, 100, 3600).unwrap();
        Canary::start(&token, KEY, 100, &suite_hash(&suite()), candidate, fair, "dep-1", cfg).unwrap()
    }

    #[test]
    fn self_comparison_promotes_with_zero_delta() {
        let cfg = CanaryConfig::for_goal(Goal::MinAvgCompletion);
        let mut c = admitted(builtin("fair_vruntime").unwrap(), &cfg);
        let mut ledger = FeedbackLedger::new();
        let s = c.run(&ReplaySource(suite()[0].clone()), &SimMeter::default(), Some(&mut ledger)).unwrap();
        assert_eq!(s.phase, CanaryPhase::Promoted);
        assert_eq!(s.windows_completed, 10);
        assert_eq!(s.outcome_delta, Some(PerformanceDelta::ZERO));
        assert_eq!(ledger.is_closed("dep-1"), Some(true));
        assert_eq!(ledger.report_feedback("dep-1").unwrap(), PerformanceDelta::ZERO);
    }

    #[test]
    fn degraded_tail_reverts_after_three_windows() {
        let cfg = CanaryConfig::default();
        let mut c = admitted(builtin("fair_vruntime").unwrap(), &cfg);
        let meter = DegradedMeter {
            inner: SimMeter::default(),
            p99_factor: 1.3,
        };
        let src = ReplaySource(suite()[0].clone());
        for k in 1..=2 {
            let s = c.step(&src, &meter, None).unwrap();
            assert_eq!((s.phase, s.consecutive_trips), (CanaryPhase::Running, k));
        }
        let s = c.step(&src, &meter, None).unwrap().clone();
        assert_eq!(s.phase, CanaryPhase::Reverted);
        assert_eq!(s.active_policy_id, s.baseline_policy_id);
        let o = c.outcome("fp", 0).unwrap();
        assert!(o.improvement_pct() < 0.0);
        assert!(matches!(c.step(&src, &meter, None), Err(CanaryError::NotRunning(_))));
    }

    #[test]
    fn admission_checks() {
        let fair = builtin("fair_vruntime").unwrap();
        let report = Verifier::default().run_pipeline(&fair, &suite(), &fair, None);
        let token = issue_token(&report, KEY, 100, 3600).unwrap();
        let cfg = CanaryConfig::default();
        let h = suite_hash(&suite());
        let mut bad = token.clone();
        bad.mac = bad.mac.replacen(&bad.mac[..1], if &bad.mac[..1] == "A" { "B" } else { "A" }, 1);
        let err = Canary::start(&bad, KEY, 100, &h, fair.clone(), fair.clone(), "d", &cfg).unwrap_err();
        assert!(matches!(err, CanaryError::Token(TokenError::InvalidToken)));
        let err = Canary::start(&token, KEY, 100, "other", fair.clone(), fair.clone(), "d", &cfg).unwrap_err();
        assert!(matches!(err, CanaryError::Token(TokenError::TokenSuiteMismatch)));
        let err = Canary::start(&token, KEY, 4000, &h, fair.clone(), fair.clone(), "d", &cfg).unwrap_err();
        assert!(matches!(err, CanaryError::Token(TokenError::Expired)));
        let mut other = fair.clone();
        other.priority = parse_expr("-vruntime + 1").unwrap();
        let err = Canary::start(&token, KEY, 100, &h, other, fair, "d", &cfg).unwrap_err();
        assert!(matches!(err, CanaryError::PolicyMismatch { .. }));
    }

    #[test]
    fn closure_sources_see_window_index() {
        let src = |i: u32, n: u32| gen_longtail_batch(n - 1, 1_000 * u64::from(i + 1), 1, 10_000).unwrap();
        let w = WindowSource::window(&src, 2, 8);
        assert_eq!(w.tasks.len(), 8);
        assert_eq!(w.tasks[0].total_work, 3_000);
    }
}
