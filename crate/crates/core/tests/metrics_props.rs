mod common;

use proptest::prelude::*;

use common::{arb_config, arb_policy, arb_workload};
use schedplane_core::domain::{compute_delta, Goal, MetricsReport, PerformanceDelta};
use schedplane_core::sim::simulate_with;

const GOALS: [Goal; 4] = [Goal::MinMakespan, Goal::MinP99, Goal::MinAvgCompletion, Goal::MaxThroughput];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn report_fields_agree_with_the_trace(w in arb_workload(), p in arb_policy(), cfg in arb_config()) {
        let r = simulate_with(&w, &p, &cfg).unwrap();
        let m = r.metrics.clone().unwrap();
        let n = r.trace.len() as f64;
        prop_assert_eq!(m.tasks_completed, r.trace.len() as u64);
        let mean = r.trace.iter().map(|t| (t.completion - t.arrival) as f64).sum::<f64>() / n;
        prop_assert!((m.avg_completion - mean).abs() <= 1e-9 * mean.max(1.0));
        prop_assert!(m.latency_p50 <= m.latency_p95 && m.latency_p95 <= m.latency_p99);
        prop_assert!(m.jain_fairness > 0.0 && m.jain_fairness <= 1.0 + 1e-12);
        prop_assert!(m.cpu_utilization > 0.0 && m.cpu_utilization <= 1.0 + 1e-12);
        let busy: u64 = r.trace.iter().map(|t| t.exec).sum();
        prop_assert!(busy <= m.makespan * u64::from(w.core_count));
        prop_assert!(m.throughput > 0.0);

        let avg = MetricsReport::mean(&[m.clone(), m.clone(), m.clone()]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        prop_assert_eq!((avg.tasks_completed, avg.makespan, avg.latency_p99), (m.tasks_completed, m.makespan, m.latency_p99));
        prop_assert_eq!(&avg.max_wait_by_weight, &m.max_wait_by_weight);
        prop_assert!(close(avg.avg_completion, m.avg_completion) && close(avg.throughput, m.throughput));
        prop_assert!(close(avg.jain_fairness, m.jain_fairness) && close(avg.cpu_utilization, m.cpu_utilization));
        prop_assert_eq!(compute_delta(&m, &m).unwrap(), PerformanceDelta::ZERO);
    }

    #[test]
    fn gain_sign_follows_goal_direction(before in 1.0..1e9f64, after in 1.0..1e9f64) {
        for g in GOALS {
            let gain = g.gain_pct(before, after);
            let better = if g.minimizes() { after < before } else { after > before };
            prop_assert_eq!(gain > 0.0, better);
            prop_assert_eq!(gain == 0.0, after == before);
        }
    }
}
