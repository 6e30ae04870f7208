use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Micros, TaskId, WorkloadSpec};

const TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Durations,
    Dag,
    Wakeups,
}

impl Probe {
    pub const ALL: [Probe; 3] = [Probe::Durations, Probe::Dag, Probe::Wakeups];

    pub fn as_str(self) -> &'static str {
        match self {
            Probe::Durations => "durations",
            Probe::Dag => "dag",
            Probe::Wakeups => "wakeups",
        }
    }
}

impl FromStr for Probe {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Probe::ALL.into_iter().find(|p| p.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTask {
    pub id: TaskId,
    pub work: Micros,
    pub hint: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationProfile {
    pub count: u64,
    pub min: Micros,
    pub p50: Micros,
    pub p90: Micros,
    pub max: Micros,
    pub mean: f64,
    /// Longest tasks first, ties by id.
    pub longest: Vec<LongTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagProfile {
    pub depth: usize,
    pub width: usize,
    pub edges: usize,
    pub roots: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeProfile {
    /// Tasks woken by another task's completion.
    pub woken_tasks: usize,
    pub chains: usize,
    pub max_chain_len: usize,
    pub mean_chain_len: f64,
    /// Median arrival gap between a task and the task it wakes.
    pub median_period: Option<Micros>,
}

/// Tier-2 report; only requested sections are present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub durations: Option<DurationProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<DagProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wakeups: Option<WakeProfile>,
}

/// Where observations come from. The simulator-backed source reads the
/// workload spec directly; adapters for live systems implement the same trait.
pub trait ProbeSource: Send + Sync {
    fn workload(&self) -> &WorkloadSpec;
    fn supports(&self, probe: Probe) -> bool;
    /// Fill in the section for `probe`. Only called for supported probes.
    fn run(&self, probe: Probe, report: &mut ProfileReport);
}

#[derive(Debug, Clone)]
pub struct SimProbeSource {
    workload: WorkloadSpec,
}

impl SimProbeSource {
    pub fn new(workload: WorkloadSpec) -> Self {
        SimProbeSource { workload }
    }
}

impl ProbeSource for SimProbeSource {
    fn workload(&self) -> &WorkloadSpec {
        &self.workload
    }

    fn supports(&self, _probe: Probe) -> bool {
        true
    }

    fn run(&self, probe: Probe, report: &mut ProfileReport) {
        match probe {
            Probe::Durations => report.durations = Some(durations(&self.workload)),
            Probe::Dag => report.dag = Some(dag(&self.workload)),
            Probe::Wakeups => report.wakeups = Some(wakeups(&self.workload)),
        }
    }
}

fn durations(w: &WorkloadSpec) -> DurationProfile {
    let mut works: Vec<Micros> = w.tasks.iter().map(|t| t.total_work).collect();
    works.sort_unstable();
    let n = works.len();
    let rank = |p: f64| works[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    let mut by_len: Vec<_> = w.tasks.iter().collect();
    by_len.sort_by(|a, b| b.total_work.cmp(&a.total_work).then(a.id.cmp(&b.id)));
    DurationProfile {
        count: n as u64,
        min: works[0],
        p50: rank(0.5),
        p90: rank(0.9),
        max: works[n - 1],
        mean: works.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
        longest: by_len
            .into_iter()
            .take(TOP_K)
            .map(|t| LongTask {
                id: t.id,
                work: t.total_work,
                hint: t.expected_runtime_hint,
            })
            .collect(),
    }
}

fn dag(w: &WorkloadSpec) -> DagProfile {
    match w.dependency_graph() {
        Ok(g) => DagProfile {
            depth: g.depth(),
            width: g.width(),
            edges: g.deps.iter().map(|d| d.len()).sum(),
            roots: g.deps.iter().filter(|d| d.is_empty()).count(),
            leaves: g.dependents.iter().filter(|d| d.is_empty()).count(),
        },
        Err(_) => DagProfile {
            depth: 0,
            width: 0,
            edges: 0,
            roots: 0,
            leaves: 0,
        },
    }
}

fn wakeups(w: &WorkloadSpec) -> WakeProfile {
    let index: HashMap<TaskId, usize> = w.tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let mut woken = vec![false; w.tasks.len()];
    let mut gaps = Vec::new();
    for t in &w.tasks {
        for target in &t.wake_targets {
            if let Some(&j) = index.get(target) {
                woken[j] = true;
                let next = w.tasks[j].arrival_time;
                if next > t.arrival_time {
                    gaps.push(next - t.arrival_time);
                }
            }
        }
    }
    // chain length through wake edges, memoized; wake edges are acyclic in a valid workload
    let mut len: Vec<Option<usize>> = vec![None; w.tasks.len()];
    fn chain_len(i: usize, w: &WorkloadSpec, index: &HashMap<TaskId, usize>, len: &mut Vec<Option<usize>>) -> usize {
        if let Some(l) = len[i] {
            return l;
        }
        len[i] = Some(1);
        let mut best = 0;
        for target in &w.tasks[i].wake_targets {
            if let Some(&j) = index.get(target) {
                best = best.max(chain_len(j, w, index, len));
            }
        }
        len[i] = Some(1 + best);
        1 + best
    }
    let heads: Vec<usize> = (0..w.tasks.len())
        .filter(|&i| !woken[i] && !w.tasks[i].wake_targets.is_empty())
        .collect();
    let lens: Vec<usize> = heads.iter().map(|&i| chain_len(i, w, &index, &mut len)).collect();
    gaps.sort_unstable();
    WakeProfile {
        woken_tasks: woken.iter().filter(|&&b| b).count(),
        chains: heads.len(),
        max_chain_len: lens.iter().copied().max().unwrap_or(0),
        mean_chain_len: if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<usize>() as f64 / lens.len() as f64
        },
        median_period: (!gaps.is_empty()).then(|| gaps[(gaps.len() - 1) / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::gen_latency_chain;

    #[test]
    fn wake_chains_of_latency_workload() {
        let w = gen_latency_chain(3, 10_000, 1_000, 1).unwrap();
        let p = wakeups(&w);
        assert_eq!(p.chains, 3);
        assert_eq!(p.max_chain_len, 50);
        assert_eq!(p.woken_tasks, 147);
        assert_eq!(p.median_period, Some(10_000));
    }

    #[test]
    fn probe_names() {
        assert_eq!("dag".parse::<Probe>(), Ok(Probe::Dag));
        assert!("cache_misses".parse::<Probe>().is_err());
    }
}
