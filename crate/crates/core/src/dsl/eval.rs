use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::ast::Expr;
use super::{DslError, Param, PolicySpec, SLICE_MAX, SLICE_MIN};
use crate::domain::{Micros, TaskId, TaskRuntimeState};

pub fn evaluate(
    expr: &Expr,
    state: &TaskRuntimeState,
    params: &BTreeMap<String, Param>,
) -> Result<f64, DslError> {
    Ok(match expr {
        Expr::Const(c) => *c,
        Expr::Feature(f) => f.value(state),
        Expr::Param(p) => params
            .get(p)
            .map(|p| p.value)
            .ok_or_else(|| DslError::UnknownIdentifier(p.clone()))?,
        Expr::Neg(a) => -evaluate(a, state, params)?,
        Expr::Add(a, b) => evaluate(a, state, params)? + evaluate(b, state, params)?,
        Expr::Sub(a, b) => evaluate(a, state, params)? - evaluate(b, state, params)?,
        Expr::Mul(a, b) => evaluate(a, state, params)? * evaluate(b, state, params)?,
        Expr::Div(a, b) => {
            let d = evaluate(b, state, params)?;
            if d == 0.0 {
                return Err(DslError::DivisionByZero);
            }
            evaluate(a, state, params)? / d
        }
        Expr::Min(a, b) => evaluate(a, state, params)?.min(evaluate(b, state, params)?),
        Expr::Max(a, b) => evaluate(a, state, params)?.max(evaluate(b, state, params)?),
        Expr::Clamp(x, lo, hi) => {
            let x = evaluate(x, state, params)?;
            let lo = evaluate(lo, state, params)?;
            let hi = evaluate(hi, state, params)?;
            x.max(lo).min(hi)
        }
    })
}

/// Sort key realising the dispatch order: priority descending, then
/// enqueue time ascending, then task id ascending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankKey {
    pub priority: f64,
    pub enqueue_time: Micros,
    pub id: TaskId,
}

impl RankKey {
    /// `Less` means `self` is dispatched before `other`.
    pub fn dispatch_cmp(&self, other: &RankKey) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then(self.enqueue_time.cmp(&other.enqueue_time))
            .then(self.id.cmp(&other.id))
    }
}

/// Indices of `keys` in dispatch order.
pub fn rank_order(keys: &[RankKey]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].dispatch_cmp(&keys[b]));
    idx
}

/// A policy with its params substituted, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct BoundPolicy {
    priority: Expr,
    slice: Option<Expr>,
    pub preemptive: bool,
}

static NO_PARAMS: BTreeMap<String, Param> = BTreeMap::new();

impl BoundPolicy {
    pub fn new(spec: &PolicySpec) -> Self {
        let lookup = |n: &str| spec.param_value(n);
        BoundPolicy {
            priority: spec.priority.bind_params(&lookup),
            slice: spec.slice.as_ref().map(|s| s.bind_params(&lookup)),
            preemptive: spec.preemptive,
        }
    }

    pub fn priority(&self, state: &TaskRuntimeState) -> Result<f64, DslError> {
        evaluate(&self.priority, state, &NO_PARAMS)
    }

    /// Slice length in microseconds clamped to the legal range, or `None`
    /// when the task runs to completion.
    pub fn slice(&self, state: &TaskRuntimeState) -> Result<Option<Micros>, DslError> {
        if !self.preemptive {
            return Ok(None);
        }
        let Some(expr) = &self.slice else {
            return Ok(None);
        };
        let v = evaluate(expr, state, &NO_PARAMS)?;
        let v = if v.is_nan() { SLICE_MAX } else { v.clamp(SLICE_MIN, SLICE_MAX) };
        Ok(Some(v.round() as Micros))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin, parse_expr};
    use super::*;

    fn state() -> TaskRuntimeState {
        TaskRuntimeState {
            weight: 1024,
            ..Default::default()
        }
    }

    #[test]
    fn builtin_expressions() {
        let none = BTreeMap::new();
        let mut s = state();
        s.arrival_time = 5;
        assert_eq!(evaluate(&builtin("fifo").unwrap().priority, &s, &none).unwrap(), -5.0);

        s.expected_runtime = 30_000_000;
        assert_eq!(evaluate(&builtin("ljf").unwrap().priority, &s, &none).unwrap(), 3e7);

        s.vruntime = 1024.0;
        assert_eq!(
            evaluate(&builtin("fair_vruntime").unwrap().priority, &s, &none).unwrap(),
            -1024.0
        );
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse_expr("1 / exec_runtime").unwrap();
        assert_eq!(evaluate(&e, &state(), &BTreeMap::new()), Err(DslError::DivisionByZero));
    }

    #[test]
    fn slices_are_clamped() {
        let mut p = builtin("fair_vruntime").unwrap();
        let b = BoundPolicy::new(&p);
        assert_eq!(b.slice(&state()).unwrap(), Some(3000));
        p.slice = Some(parse_expr("1").unwrap());
        assert_eq!(BoundPolicy::new(&p).slice(&state()).unwrap(), Some(100));
        p.slice = Some(parse_expr("1e9").unwrap());
        assert_eq!(BoundPolicy::new(&p).slice(&state()).unwrap(), Some(100_000));
        assert_eq!(BoundPolicy::new(&builtin("fifo").unwrap()).slice(&state()).unwrap(), None);
    }

    #[test]
    fn tie_break_chain() {
        let k = |p: f64, e: u64, id: u32| RankKey {
            priority: p,
            enqueue_time: e,
            id: TaskId(id),
        };
        let keys = [k(1.0, 5, 0), k(2.0, 9, 1), k(1.0, 3, 2), k(1.0, 3, 1)];
        assert_eq!(rank_order(&keys), vec![1, 3, 2, 0]);
    }
}
