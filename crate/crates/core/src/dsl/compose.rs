use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{Expr, Feature};
use super::parser::parse_expr;
use super::render::render_expr;
use super::{DslError, Param, PolicySpec, SLICE_MAX, SLICE_MIN};

/// A named priority fragment that composition sums with weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub name: String,
    pub expr: Expr,
}

impl Fragment {
    pub fn new(name: impl Into<String>, expr: Expr) -> Self {
        Fragment {
            name: name.into(),
            expr,
        }
    }
}

/// The primitive ordering fragments available for composition.
pub fn fragment_library() -> Vec<Fragment> {
    let f = Expr::feature;
    vec![
        Fragment::new("arrival_order", Expr::neg(f(Feature::ArrivalTime))),
        Fragment::new("fair_share", Expr::neg(f(Feature::Vruntime))),
        Fragment::new("longest_first", f(Feature::ExpectedRuntime)),
        Fragment::new("shortest_first", Expr::neg(f(Feature::ExpectedRuntime))),
        Fragment::new("aging", f(Feature::WaitTime)),
        Fragment::new("weight", f(Feature::Weight)),
    ]
}

/// `priority = Σ weightᵢ · fragmentᵢ`. Compositions that read `vruntime`
/// are preemptive with a `slice_base` slice; all others run to completion.
pub fn compose(fragments: &[Fragment], weights: &[f64]) -> Result<PolicySpec, DslError> {
    if fragments.is_empty() {
        return Err(DslError::EmptyComposition);
    }
    if fragments.len() != weights.len() {
        return Err(DslError::InvalidSpec(format!(
            "{} fragments but {} weights",
            fragments.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(DslError::InvalidSpec(format!("non-finite weight {w}")));
    }

    let mut priority: Option<Expr> = None;
    let mut provenance = Vec::with_capacity(fragments.len());
    for (frag, &w) in fragments.iter().zip(weights) {
        if !frag.expr.params().is_empty() {
            return Err(DslError::InvalidSpec(format!(
                "fragment `{}` references params",
                frag.name
            )));
        }
        let term = if w == 1.0 {
            frag.expr.clone()
        } else {
            Expr::mul(Expr::Const(w), frag.expr.clone())
        };
        provenance.push(format!("{w} x {} ({})", frag.name, render_expr(&frag.expr)));
        priority = Some(match priority {
            None => term,
            Some(acc) => Expr::add(acc, term),
        });
    }
    let priority = priority.expect("non-empty");

    let preemptive = priority.features().contains(&Feature::Vruntime);
    let (params, slice) = if preemptive {
        (
            BTreeMap::from([(
                "slice_base".to_string(),
                Param::new(3_000.0, SLICE_MIN, SLICE_MAX),
            )]),
            Some(Expr::param("slice_base")),
        )
    } else {
        (BTreeMap::new(), None)
    };
    let name = fragments
        .iter()
        .map(|f| f.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let spec = PolicySpec {
        name: format!("composed:{name}"),
        description: format!("composed from {}", provenance.join(", ")),
        tags: vec!["composed".into()],
        params,
        priority,
        slice,
        preemptive,
    };
    spec.validate()?;
    Ok(spec)
}

/// One edit applied by [`apply_patch`]. Expression edits carry DSL source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum PatchEdit {
    /// Replace the priority expression.
    Priority { expr: String },
    /// Append `+ expr` to the priority expression.
    AddPriorityTerm { expr: String },
    /// Replace the slice expression; `inf` means run to completion.
    Slice { expr: String },
    /// Set an existing param.
    Param { name: String, value: f64 },
}

impl PatchEdit {
    fn summary(&self) -> String {
        match self {
            PatchEdit::Priority { expr } => format!("priority := {expr}"),
            PatchEdit::AddPriorityTerm { expr } => format!("priority += {expr}"),
            PatchEdit::Slice { expr } => format!("slice := {expr}"),
            PatchEdit::Param { name, value } => format!("{name} := {value}"),
        }
    }
}

/// Apply edits to a copy of `base` and revalidate from scratch. Either every
/// edit lands or an error is returned and nothing changes.
pub fn apply_patch(base: &PolicySpec, edits: &[PatchEdit]) -> Result<PolicySpec, DslError> {
    if edits.is_empty() {
        return Err(DslError::InvalidEdit("empty edit list".into()));
    }
    let mut spec = base.clone();
    for edit in edits {
        match edit {
            PatchEdit::Priority { expr } => spec.priority = parse_expr(expr)?,
            PatchEdit::AddPriorityTerm { expr } => {
                let term = parse_expr(expr)?;
                spec.priority = Expr::add(spec.priority, term);
            }
            PatchEdit::Slice { expr } => {
                spec.slice = if expr.trim() == "inf" {
                    None
                } else {
                    Some(parse_expr(expr)?)
                };
            }
            PatchEdit::Param { name, value } => {
                let p = spec
                    .params
                    .get_mut(name)
                    .ok_or_else(|| DslError::InvalidEdit(format!("no param `{name}`")))?;
                p.value = *value;
            }
        }
    }
    let summary = edits.iter().map(PatchEdit::summary).collect::<Vec<_>>().join("; ");
    spec.name = format!("{}+patch", base.name);
    spec.description = format!("{} [patch of {}: {}]", base.description, base.name, summary);
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::super::builtin;
    use super::*;

    fn frag(name: &str) -> Fragment {
        fragment_library().into_iter().find(|f| f.name == name).unwrap()
    }

    #[test]
    fn singleton_fair_matches_builtin_priority() {
        let p = compose(&[frag("fair_share")], &[1.0]).unwrap();
        assert_eq!(p.priority, builtin("fair_vruntime").unwrap().priority);
        assert!(p.preemptive);
    }

    #[test]
    fn weighted_sum_records_provenance() {
        let p = compose(&[frag("longest_first"), frag("aging")], &[1.0, 0.01]).unwrap();
        assert_eq!(
            p.priority,
            Expr::add(
                Expr::feature(Feature::ExpectedRuntime),
                Expr::mul(Expr::Const(0.01), Expr::feature(Feature::WaitTime))
            )
        );
        assert!(p.description.contains("longest_first"));
        assert!(p.description.contains("aging"));
        assert!(!p.preemptive);
    }

    #[test]
    fn empty_and_mismatched_compositions() {
        assert_eq!(compose(&[], &[]), Err(DslError::EmptyComposition));
        assert!(matches!(
            compose(&[frag("aging")], &[1.0, 2.0]),
            Err(DslError::InvalidSpec(_))
        ));
    }

    #[test]
    fn param_patch() {
        let base = builtin("fair_vruntime").unwrap();
        let p = apply_patch(
            &base,
            &[PatchEdit::Param {
                name: "slice_base".into(),
                value: 1000.0,
            }],
        )
        .unwrap();
        assert_eq!(p.param_value("slice_base"), Some(1000.0));
        assert!(p.description.contains("patch of fair_vruntime"));
        assert_ne!(p.content_id(), base.content_id());
    }

    #[test]
    fn failing_patch_is_atomic() {
        let base = builtin("fair_vruntime").unwrap();
        let before = base.clone();
        let err = apply_patch(
            &base,
            &[
                PatchEdit::Param {
                    name: "slice_base".into(),
                    value: 1000.0,
                },
                PatchEdit::Priority { expr: "foo".into() },
            ],
        )
        .unwrap_err();
        assert_eq!(err, DslError::UnknownIdentifier("foo".into()));
        assert_eq!(base, before);

        assert!(matches!(
            apply_patch(&base, &[PatchEdit::Param { name: "nope".into(), value: 1.0 }]),
            Err(DslError::InvalidEdit(_))
        ));
        assert!(matches!(
            apply_patch(&base, &[PatchEdit::Slice { expr: "inf".into() }]),
            Err(DslError::InvalidSpec(_))
        ));
    }

    #[test]
    fn aging_term_appends() {
        let p = apply_patch(
            &builtin("ljf").unwrap(),
            &[PatchEdit::AddPriorityTerm {
                expr: "0.01 * wait_time".into(),
            }],
        )
        .unwrap();
        assert!(p.priority.features().contains(&Feature::WaitTime));
    }
}
