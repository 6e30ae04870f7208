use std::fmt::Write;

use serde_json::json;

use schedplane_core::analysis::goal_for_family;
use schedplane_core::domain::{MetricsReport, WorkloadSpec};
use schedplane_core::dsl::PolicySpec;
use schedplane_core::sim::{
    gen_build_dag, gen_latency_chain_with, gen_longtail_batch, simulate_with, DurationDist, LatencyChainParams,
    SimConfig,
};

use super::{domain, emit, print_json, resolve_policy, Failure, Format, Result};

const BASELINE: &str = "fair_vruntime";

pub const SUITES: [&str; 3] = ["longtail", "build-dag", "latency-chain"];

fn workload(suite: &str, seed: u64) -> Result<WorkloadSpec> {
    let mut w = match suite {
        // 39 one-second jobs and one 30 s job on 8 cores
        "longtail" => gen_longtail_batch(39, 1_000_000, 1, 30_000_000),
        "build-dag" => gen_build_dag(120, 3, DurationDist::default(), seed),
        "latency-chain" => gen_latency_chain_with(
            16,
            10_000,
            1_000,
            seed,
            LatencyChainParams {
                requests_per_worker: 100,
                long_request_prob: 0.005,
                ..LatencyChainParams::default()
            },
        ),
        _ => return Err(Failure::Domain(format!("unknown suite `{suite}` (known: {})", SUITES.join(", ")))),
    }
    .map_err(domain)?;
    w.seed = seed;
    Ok(w)
}

fn run_all(spec: &PolicySpec, workloads: &[WorkloadSpec]) -> std::result::Result<Vec<MetricsReport>, String> {
    workloads
        .iter()
        .map(|w| {
            let r = simulate_with(w, spec, &SimConfig::seeded(w.seed)).map_err(|e| format!("{}: {e}", spec.name))?;
            r.metrics.ok_or_else(|| format!("{} completed nothing on {}", spec.name, w.name))
        })
        .collect()
}

const CSV_HEADER: &str = "policy,seed,tasks_completed,makespan,avg_completion,latency_p50,latency_p95,latency_p99,\
throughput,jain_fairness,cpu_utilization,improvement_pct";

fn csv_row(out: &mut String, policy: &str, seed: &str, m: &MetricsReport, improvement: f64) {
    let _ = writeln!(
        out,
        "{policy},{seed},{},{},{},{},{},{},{},{},{},{improvement}",
        m.tasks_completed,
        m.makespan,
        m.avg_completion,
        m.latency_p50,
        m.latency_p95,
        m.latency_p99,
        m.throughput,
        m.jain_fairness,
        m.cpu_utilization
    );
}

/// Every policy on every seed of the suite; the baseline always runs first.
pub fn run(suite: &str, policies: &[String], seeds: u64, format: Format) -> Result<()> {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let workloads = (0..seeds).map(|s| workload(suite, s)).collect::<Result<Vec<_>>>()?;
    let goal = goal_for_family(workloads[0].family);
    let mut names = vec![BASELINE.to_string()];
    names.extend(policies.iter().filter(|p| !p.is_empty() && *p != BASELINE).cloned());
    let specs = names
        .iter()
        .map(|n| resolve_policy(n))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Failure::Domain)?;

    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs.iter().map(|s| scope.spawn(|| run_all(s, &workloads))).collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let results = results.into_iter().collect::<std::result::Result<Vec<_>, _>>().map_err(Failure::Domain)?;

    let base = &results[0];
    let base_mean = MetricsReport::mean(base).expect("at least one seed");
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    let mut csv = format!("{CSV_HEADER}\n");
    eprintln!("{suite}: {} over {seeds} seeds, baseline {BASELINE}", goal.as_str());
    for (name, reports) in names.iter().zip(&results) {
        for ((w, m), b) in workloads.iter().zip(reports).zip(base) {
            let gain = goal.gain_pct(goal.metric(b), goal.metric(m));
            csv_row(&mut csv, name, &w.seed.to_string(), m, gain);
            runs.push(json!({ "policy": name, "seed": w.seed, "metrics": m, "improvement_pct": gain }));
        }
        let mean = MetricsReport::mean(reports).expect("at least one seed");
        let gain = goal.gain_pct(goal.metric(&base_mean), goal.metric(&mean));
        csv_row(&mut csv, name, "mean", &mean, gain);
        eprintln!("  {name:<24} {:>16.1} {gain:>+8.2}%", goal.metric(&mean));
        summary.push(json!({
            "policy": name,
            "goal_metric": goal.metric(&mean),
            "improvement_pct": gain,
            "mean": mean,
        }));
    }
    match format {
        Format::Json => print_json(&json!({
            "suite": suite,
            "goal": goal,
            "baseline": BASELINE,
            "seeds": workloads.iter().map(|w| w.seed).collect::<Vec<_>>(),
            "runs": runs,
            "summary": summary,
        })),
        Format::Csv => emit(csv.trim_end()),
    }
    Ok(())
}
