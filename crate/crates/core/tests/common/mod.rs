//! Strategies and independent oracles shared by the property suites and the
//! acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use schedplane_core::domain::{Family, TaskId, TaskSpec, WorkloadSpec};
use schedplane_core::dsl::{builtin, compose, fragment_library, Expr, Feature, PolicySpec, RankKey, BUILTIN_NAMES};
use schedplane_core::sim::{gen_build_dag, gen_latency_chain, DurationDist, SimConfig, SimResult};

pub const PARAM_NAMES: [&str; 2] = ["slice_base", "k"];

fn arb_const() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..1000).prop_map(f64::from),
        (-1e6..1e6f64),
        Just(0.5),
        Just(-0.0),
        (1e-9..1e-3f64),
        (1e12..1e15f64),
    ]
}

/// Expression trees in normal form: negation never wraps a constant.
pub fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        arb_const().prop_map(Expr::Const),
        proptest::sample::select(Feature::ALL.to_vec()).prop_map(Expr::feature),
        proptest::sample::select(PARAM_NAMES.to_vec()).prop_map(Expr::param),
    ];
    leaf.prop_recursive(6, 48, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::min(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::max(a, b)),
            (inner.clone(), inner.clone(), inner).prop_map(|(x, l, h)| Expr::clamp(x, l, h)),
        ]
    })
}

/// Divisor-free trees over features only, small enough that no value
/// overflows for states drawn from [`arb_state`].
pub fn arb_priority() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..100).prop_map(|c| Expr::Const(f64::from(c))),
        proptest::sample::select(Feature::ALL.to_vec()).prop_map(Expr::feature),
    ];
    leaf.prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::min(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::max(a, b)),
        ]
    })
}

/// Keys drawn from a small domain so ties on every field occur.
pub fn arb_key() -> impl Strategy<Value = RankKey> {
    (prop_oneof![any::<f64>(), (-3i32..3).prop_map(f64::from)], 0u64..4, 0u32..6).prop_map(|(priority, enqueue_time, id)| RankKey {
        priority,
        enqueue_time,
        id: TaskId(id),
    })
}

pub fn arb_state() -> impl Strategy<Value = schedplane_core::domain::TaskRuntimeState> {
    (
        0u64..1_000_000_000,
        0u64..1_000_000,
        0u64..1_000_000_000,
        0u64..1_000_000_000,
        1u32..10_000,
        0u64..1000,
    )
        .prop_map(|(arrival, wait, exec, expected, weight, wakeups)| {
            schedplane_core::domain::TaskRuntimeState {
                arrival_time: arrival,
                enqueue_time: arrival,
                wait_time: wait,
                exec_runtime: exec,
                vruntime: exec as f64 * 1024.0 / f64::from(weight),
                expected_runtime: expected,
                weight,
                wakeup_count: wakeups,
                now: arrival + wait,
            }
        })
}

/// Independent tasks with staggered arrivals, or a random DAG where every
/// dependency points at a lower id.
pub fn arb_custom_workload() -> impl Strategy<Value = WorkloadSpec> {
    (
        1u32..=6,
        prop::collection::vec((0u64..50_000, 1u64..40_000, 0usize..4, 0u32..3), 1..40),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(cores, rows, with_deps, seed)| {
            let tasks = rows
                .iter()
                .enumerate()
                .map(|(i, &(arrival, work, ndeps, w))| {
                    let mut t = TaskSpec::new(i as u32, arrival, work);
                    t.weight = [512, 1024, 2048][w as usize];
                    if with_deps && i > 0 {
                        t.deps = (0..ndeps)
                            .map(|k| TaskId(((i * 7 + k * 13) % i) as u32))
                            .collect::<BTreeSet<_>>();
                    }
                    t
                })
                .collect();
            WorkloadSpec {
                name: format!("random-{seed:x}"),
                family: Family::Custom,
                tasks,
                core_count: cores,
                seed,
                horizon: None,
            }
        })
}

pub fn arb_workload() -> impl Strategy<Value = WorkloadSpec> {
    prop_oneof![
        3 => arb_custom_workload(),
        1 => (10usize..60, 1usize..4, any::<u64>())
            .prop_map(|(n, fan, seed)| gen_build_dag(n, fan, DurationDist::default(), seed).unwrap()),
        1 => (1u32..6, 1u64..4, any::<u64>())
            .prop_map(|(workers, k, seed)| gen_latency_chain(workers, 10_000, k * 1_000, seed).unwrap()),
    ]
}

pub fn arb_policy() -> impl Strategy<Value = PolicySpec> {
    let names: Vec<&str> = BUILTIN_NAMES.to_vec();
    let lib = fragment_library();
    let n = lib.len();
    prop_oneof![
        2 => proptest::sample::select(names).prop_map(|n| builtin(n).unwrap()),
        1 => prop::collection::btree_map(0..n, 0.001..2.0f64, 1..4).prop_map(move |picked| {
            let lib = fragment_library();
            let frags: Vec<_> = picked.keys().map(|&i| lib[i].clone()).collect();
            let weights: Vec<f64> = picked.values().copied().collect();
            compose(&frags, &weights).unwrap()
        }),
    ]
}

pub fn arb_config() -> impl Strategy<Value = SimConfig> {
    (any::<u64>(), prop_oneof![Just(0.0), Just(0.3)]).prop_map(|(seed, noise)| {
        let mut c = SimConfig::seeded(seed);
        c.hint_noise = noise;
        c
    })
}

/// Trace-level checks that do not trust the simulator's own bookkeeping.
/// Returns the first broken invariant.
pub fn check_run(w: &WorkloadSpec, p: &PolicySpec, r: &SimResult) -> Result<(), String> {
    if !r.violations.is_empty() {
        return Err(format!("simulator reported {:?}", r.violations[0]));
    }
    if !r.complete {
        return Err("run without a horizon did not complete".into());
    }
    let spec: BTreeMap<u32, &TaskSpec> = w.tasks.iter().map(|t| (t.id.0, t)).collect();

    // task conservation: each task finishes exactly once with all its work
    let mut seen = BTreeSet::new();
    for t in &r.trace {
        if !seen.insert(t.id.0) {
            return Err(format!("task {} finished twice", t.id.0));
        }
        let s = spec.get(&t.id.0).ok_or(format!("unknown task {}", t.id.0))?;
        if t.exec != s.total_work {
            return Err(format!("task {} ran {} of {}", t.id.0, t.exec, s.total_work));
        }
        if t.first_run < t.enqueue || t.enqueue < t.arrival || t.completion < t.first_run + t.exec {
            return Err(format!("task {} has inconsistent timestamps {t:?}", t.id.0));
        }
    }
    if seen.len() != w.tasks.len() || !r.pending.is_empty() {
        return Err(format!("{} of {} tasks finished", seen.len(), w.tasks.len()));
    }

    // dependency safety
    let done: BTreeMap<u32, u64> = r.trace.iter().map(|t| (t.id.0, t.completion)).collect();
    for t in &r.trace {
        for d in &spec[&t.id.0].deps {
            if t.first_run < done[&d.0] {
                return Err(format!("task {} ran at {} before dep {} finished", t.id.0, t.first_run, d.0));
            }
        }
    }

    // work conservation. Without preemption every task runs as one interval,
    // so core occupancy is known exactly: a task may only wait while every
    // core is busy.
    let m = w.core_count as usize;
    if !p.preemptive {
        let spans: Vec<(u64, u64)> = r.trace.iter().map(|t| (t.first_run, t.completion)).collect();
        for t in &r.trace {
            if t.dispatches != 1 || t.completion - t.first_run != t.exec {
                return Err(format!("non-preemptive task {} was split", t.id.0));
            }
            if t.enqueue == t.first_run {
                continue;
            }
            let mut points: Vec<u64> = spans
                .iter()
                .flat_map(|&(s, e)| [s, e])
                .filter(|&x| x > t.enqueue && x < t.first_run)
                .collect();
            points.push(t.enqueue);
            for x in points {
                let busy = spans.iter().filter(|&&(s, e)| s <= x && x < e).count();
                if busy < m {
                    return Err(format!("task {} waits at {x} with {busy}/{m} cores busy", t.id.0));
                }
            }
        }
    }
    // With preemption, a waiting task still needs every core busy, which
    // bounds its waiting time by the other tasks' work over the core count.
    let independent = w.tasks.iter().all(|t| t.deps.is_empty()) && w.tasks.iter().all(|t| t.wake_targets.is_empty());
    if independent {
        let total: u64 = w.tasks.iter().map(|t| t.total_work).sum();
        for t in &r.trace {
            let waited = t.completion - t.arrival - t.exec;
            let others = total - t.exec;
            if waited as u128 * m as u128 > others as u128 {
                return Err(format!("task {} waited {waited}us, more than {others}us of other work allows", t.id.0));
            }
        }
    }
    Ok(())
}
