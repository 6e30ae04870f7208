use crate::dsl::interval::{bound, UnsafeDivisor};
use crate::dsl::{render_expr, Expr, Feature, PolicySpec, RESERVED_WORDS, SLICE_MAX, SLICE_MIN};

use super::{Finding, FindingCode};

/// Deepest expression tree accepted, counting leaves as depth 1.
pub const MAX_DEPTH: usize = 32;

/// Stage 1: binding, ranges, divisor safety, slice bounds and depth.
pub fn verify_structural(spec: &PolicySpec) -> Vec<Finding> {
    let mut out = Vec::new();
    for (name, p) in &spec.params {
        if Feature::from_name(name).is_some() || RESERVED_WORDS.contains(&name.as_str()) {
            out.push(Finding::error(
                FindingCode::ParamRange,
                format!("param `{name}` shadows a feature or keyword"),
            ));
        }
        if !(p.value.is_finite() && p.min.is_finite() && p.max.is_finite()) {
            out.push(Finding::error(FindingCode::Nonfinite, format!("param `{name}` is not finite")));
        } else if p.min > p.max || p.value < p.min || p.value > p.max {
            out.push(Finding::error(
                FindingCode::ParamRange,
                format!("param `{name}` = {} outside [{}, {}]", p.value, p.min, p.max),
            ));
        }
    }

    let exprs: Vec<(&str, &Expr)> = std::iter::once(("priority", &spec.priority))
        .chain(spec.slice.as_ref().map(|s| ("slice", s)))
        .collect();
    let mut unbound = false;
    for (what, e) in &exprs {
        for p in e.params() {
            if !spec.params.contains_key(p) {
                unbound = true;
                out.push(Finding::error(FindingCode::Unbound, format!("{what} references undeclared `{p}`")));
            }
        }
        let mut finite = true;
        e.visit(&mut |n| {
            if let Expr::Const(c) = n {
                finite &= c.is_finite();
            }
        });
        if !finite {
            out.push(Finding::error(FindingCode::Nonfinite, format!("{what} has a non-finite constant")));
        }
        let depth = e.depth();
        if depth > MAX_DEPTH {
            out.push(Finding::error(
                FindingCode::Depth,
                format!("{what} depth {depth} exceeds {MAX_DEPTH}"),
            ));
        }
    }
    if unbound {
        // ranges below need every param declared
        return out;
    }

    for (what, e) in &exprs {
        let mut bad: Vec<UnsafeDivisor> = Vec::new();
        let range = bound(e, &spec.params, &mut bad);
        for d in bad {
            out.push(Finding::error(
                FindingCode::DivZero,
                format!(
                    "{what}: divisor `{}` ranges over [{}, {}] which includes 0",
                    render_expr(&d.divisor),
                    d.range.lo,
                    d.range.hi
                ),
            ));
        }
        if *what == "slice" && spec.preemptive && (range.lo < SLICE_MIN || range.hi > SLICE_MAX) {
            out.push(Finding::error(
                FindingCode::SliceRange,
                format!("slice ranges over [{}, {}], outside [{SLICE_MIN}, {SLICE_MAX}]", range.lo, range.hi),
            ));
        }
    }
    if spec.preemptive && spec.slice.is_none() {
        out.push(Finding::error(
            FindingCode::SliceMissing,
            "preemptive policy needs a slice expression".to_string(),
        ));
    }
    out
}
