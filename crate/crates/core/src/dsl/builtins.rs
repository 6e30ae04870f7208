use std::collections::BTreeMap;

use super::ast::{Expr, Feature};
use super::{DslError, Param, PolicySpec, SLICE_MAX, SLICE_MIN};

pub const BUILTIN_NAMES: [&str; 6] = [
    "fifo",
    "round_robin",
    "fair_vruntime",
    "sjf",
    "ljf",
    "layered_weight",
];

/// Default time slice for the slicing built-ins, in microseconds.
const SLICE_BASE_DEFAULT: f64 = 3_000.0;

fn slice_param() -> BTreeMap<String, Param> {
    BTreeMap::from([(
        "slice_base".to_string(),
        Param::new(SLICE_BASE_DEFAULT, SLICE_MIN, SLICE_MAX),
    )])
}

fn tags(t: &[&str]) -> Vec<String> {
    t.iter().map(|s| s.to_string()).collect()
}

/// One of the canonical policies that seed the repository.
pub fn builtin(name: &str) -> Result<PolicySpec, DslError> {
    let f = Expr::feature;
    let spec = match name {
        "fifo" => PolicySpec {
            name: name.into(),
            description: "first in first out: simple arrival order, run to completion".into(),
            tags: tags(&["fifo", "batch", "simple"]),
            params: BTreeMap::new(),
            priority: Expr::neg(f(Feature::ArrivalTime)),
            slice: None,
            preemptive: false,
        },
        "round_robin" => PolicySpec {
            name: name.into(),
            description: "round robin time slicing in enqueue order, equal turns".into(),
            tags: tags(&["rr", "timeslice", "interactive"]),
            params: slice_param(),
            priority: Expr::neg(f(Feature::EnqueueTime)),
            slice: Some(Expr::param("slice_base")),
            preemptive: true,
        },
        "fair_vruntime" => PolicySpec {
            name: name.into(),
            description: "interactive latency fair share by weighted virtual runtime".into(),
            tags: tags(&["fair", "default", "mixed"]),
            params: slice_param(),
            priority: Expr::neg(f(Feature::Vruntime)),
            slice: Some(Expr::param("slice_base")),
            preemptive: true,
        },
        "sjf" => PolicySpec {
            name: name.into(),
            description: "shortest job first by expected runtime, short tasks finish early".into(),
            tags: tags(&["sjf", "batch", "completion"]),
            params: BTreeMap::new(),
            priority: Expr::neg(f(Feature::ExpectedRuntime)),
            slice: None,
            preemptive: false,
        },
        "ljf" => PolicySpec {
            name: name.into(),
            description: "long job first batch longtail: start the longest expected runtime early"
                .into(),
            tags: tags(&["ljf", "batch", "longtail", "makespan"]),
            params: BTreeMap::new(),
            priority: f(Feature::ExpectedRuntime),
            slice: None,
            preemptive: false,
        },
        "layered_weight" => PolicySpec {
            name: name.into(),
            description: "layered priority: weight class first, then virtual runtime within a class"
                .into(),
            tags: tags(&["layered", "weight", "priority"]),
            params: {
                let mut p = slice_param();
                // separates weight classes as long as vruntime gaps stay below it
                p.insert("layer_scale".into(), Param::new(1e9, 1.0, 1e12));
                p
            },
            priority: Expr::sub(
                Expr::mul(Expr::param("layer_scale"), f(Feature::Weight)),
                f(Feature::Vruntime),
            ),
            slice: Some(Expr::param("slice_base")),
            preemptive: true,
        },
        other => return Err(DslError::UnknownBuiltin(other.to_string())),
    };
    debug_assert!(spec.validate().is_ok());
    Ok(spec)
}
