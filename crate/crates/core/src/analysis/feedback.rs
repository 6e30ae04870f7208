use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::domain::{compute_delta, MetricsReport, PerformanceDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSide {
    Baseline,
    Candidate,
}

#[derive(Debug, Clone, Default)]
struct Deployment {
    baseline: Vec<MetricsReport>,
    candidate: Vec<MetricsReport>,
    closed: bool,
    frozen: Option<PerformanceDelta>,
}

impl Deployment {
    fn delta(&self, id: &str) -> Result<PerformanceDelta, AnalysisError> {
        let incomplete = || AnalysisError::WindowIncomplete(id.to_string());
        let base = MetricsReport::mean(&self.baseline).ok_or_else(incomplete)?;
        let cand = MetricsReport::mean(&self.candidate).ok_or_else(incomplete)?;
        Ok(compute_delta(&cand, &base)?)
    }
}

/// Measured windows per deployment, feeding `report_feedback`.
#[derive(Debug, Clone, Default)]
pub struct FeedbackLedger {
    deployments: BTreeMap<String, Deployment>,
}

impl FeedbackLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, deployment_id: &str) -> Result<(), AnalysisError> {
        if self.deployments.contains_key(deployment_id) {
            return Err(AnalysisError::DuplicateDeployment(deployment_id.to_string()));
        }
        self.deployments.insert(deployment_id.to_string(), Deployment::default());
        Ok(())
    }

    pub fn record(&mut self, deployment_id: &str, side: WindowSide, metrics: MetricsReport) -> Result<(), AnalysisError> {
        let d = self
            .deployments
            .get_mut(deployment_id)
            .ok_or_else(|| AnalysisError::UnknownDeployment(deployment_id.to_string()))?;
        if d.closed {
            return Err(AnalysisError::DeploymentClosed(deployment_id.to_string()));
        }
        match side {
            WindowSide::Baseline => d.baseline.push(metrics),
            WindowSide::Candidate => d.candidate.push(metrics),
        }
        Ok(())
    }

    /// Freeze the deployment; its delta no longer changes.
    pub fn close(&mut self, deployment_id: &str) -> Result<(), AnalysisError> {
        let d = self
            .deployments
            .get_mut(deployment_id)
            .ok_or_else(|| AnalysisError::UnknownDeployment(deployment_id.to_string()))?;
        if !d.closed {
            d.frozen = d.delta(deployment_id).ok();
            d.closed = true;
        }
        Ok(())
    }

    /// Delta of the mean candidate window over the mean baseline window.
    pub fn report_feedback(&self, deployment_id: &str) -> Result<PerformanceDelta, AnalysisError> {
        let d = self
            .deployments
            .get(deployment_id)
            .ok_or_else(|| AnalysisError::UnknownDeployment(deployment_id.to_string()))?;
        if d.closed {
            return d
                .frozen
                .ok_or_else(|| AnalysisError::WindowIncomplete(deployment_id.to_string()));
        }
        d.delta(deployment_id)
    }

    pub fn is_closed(&self, deployment_id: &str) -> Option<bool> {
        self.deployments.get(deployment_id).map(|d| d.closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::builtin;
    use crate::sim::{gen_longtail_batch, simulate};

    fn run(policy: &str) -> MetricsReport {
        let w = gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap();
        simulate(&w, &builtin(policy).unwrap(), 0).unwrap().metrics.unwrap()
    }

    #[test]
    fn identical_windows_give_zero_delta() {
        let mut l = FeedbackLedger::new();
        l.open("d1").unwrap();
        let m = run("fifo");
        l.record("d1", WindowSide::Baseline, m.clone()).unwrap();
        assert_eq!(l.report_feedback("d1"), Err(AnalysisError::WindowIncomplete("d1".into())));
        l.record("d1", WindowSide::Candidate, m).unwrap();
        assert_eq!(l.report_feedback("d1").unwrap(), PerformanceDelta::ZERO);
        assert_eq!(l.report_feedback("nope"), Err(AnalysisError::UnknownDeployment("nope".into())));
    }

    #[test]
    fn ljf_over_fair_lowers_avg_completion() {
        let mut l = FeedbackLedger::new();
        l.open("d").unwrap();
        l.record("d", WindowSide::Baseline, run("fair_vruntime")).unwrap();
        l.record("d", WindowSide::Candidate, run("ljf")).unwrap();
        assert!(l.report_feedback("d").unwrap().avg_completion_pct < 0.0);
    }

    #[test]
    fn closed_deployments_are_frozen() {
        let mut l = FeedbackLedger::new();
        l.open("d").unwrap();
        l.record("d", WindowSide::Baseline, run("fifo")).unwrap();
        l.record("d", WindowSide::Candidate, run("ljf")).unwrap();
        let before = l.report_feedback("d").unwrap();
        l.close("d").unwrap();
        assert_eq!(
            l.record("d", WindowSide::Candidate, run("fifo")),
            Err(AnalysisError::DeploymentClosed("d".into()))
        );
        assert_eq!(l.report_feedback("d").unwrap(), before);
        assert_eq!(l.open("d"), Err(AnalysisError::DuplicateDeployment("d".into())));
    }
}
