use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::TaskRuntimeState;

/// Per-task features a policy expression may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ArrivalTime,
    EnqueueTime,
    WaitTime,
    ExecRuntime,
    Vruntime,
    ExpectedRuntime,
    Weight,
    WakeupCount,
    Now,
}

/// Upper bound of any time-valued feature used by interval analysis (2^48 µs).
pub const TIME_MAX: f64 = 281_474_976_710_656.0;
/// Upper bound of count-valued features (2^32).
pub const COUNT_MAX: f64 = 4_294_967_296.0;

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::ArrivalTime,
        Feature::EnqueueTime,
        Feature::WaitTime,
        Feature::ExecRuntime,
        Feature::Vruntime,
        Feature::ExpectedRuntime,
        Feature::Weight,
        Feature::WakeupCount,
        Feature::Now,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::ArrivalTime => "arrival_time",
            Feature::EnqueueTime => "enqueue_time",
            Feature::WaitTime => "wait_time",
            Feature::ExecRuntime => "exec_runtime",
            Feature::Vruntime => "vruntime",
            Feature::ExpectedRuntime => "expected_runtime",
            Feature::Weight => "weight",
            Feature::WakeupCount => "wakeup_count",
            Feature::Now => "now",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Declared value range, used for divisor safety and sampling.
    pub fn range(self) -> (f64, f64) {
        match self {
            Feature::Weight => (1.0, 10_000.0),
            Feature::WakeupCount => (0.0, COUNT_MAX),
            _ => (0.0, TIME_MAX),
        }
    }

    pub fn value(self, s: &TaskRuntimeState) -> f64 {
        match self {
            Feature::ArrivalTime => s.arrival_time as f64,
            Feature::EnqueueTime => s.enqueue_time as f64,
            Feature::WaitTime => s.wait_time as f64,
            Feature::ExecRuntime => s.exec_runtime as f64,
            Feature::Vruntime => s.vruntime,
            Feature::ExpectedRuntime => s.expected_runtime as f64,
            Feature::Weight => s.weight as f64,
            Feature::WakeupCount => s.wakeup_count as f64,
            Feature::Now => s.now as f64,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loop-free policy expression. Constants are always finite and a `Neg`
/// never wraps a `Const` directly (negative literals are folded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Feature(Feature),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn feature(f: Feature) -> Expr {
        Expr::Feature(f)
    }

    pub fn param(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    /// Negation that keeps the normal form (folds into constants).
    #[allow(clippy::should_implement_trait)]
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            other => Expr::Neg(Box::new(other)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        Expr::Min(Box::new(a), Box::new(b))
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::Max(Box::new(a), Box::new(b))
    }

    pub fn clamp(x: Expr, lo: Expr, hi: Expr) -> Expr {
        Expr::Clamp(Box::new(x), Box::new(lo), Box::new(hi))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Feature(_) | Expr::Param(_) => Vec::new(),
            Expr::Neg(a) => vec![a],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => vec![a, b],
            Expr::Clamp(a, b, c) => vec![a, b, c],
        }
    }

    /// Tree depth; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Expr::depth).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }

    pub fn params(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.as_str());
            }
        });
        out
    }

    pub fn features(&self) -> BTreeSet<Feature> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Feature(f) = e {
                out.insert(*f);
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Replace parameter references by constants from `lookup`; unknown
    /// names are left in place.
    pub fn bind_params(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Expr {
        let b = |e: &Expr| Box::new(e.bind_params(lookup));
        match self {
            Expr::Param(p) => match lookup(p) {
                Some(v) => Expr::Const(v),
                None => self.clone(),
            },
            Expr::Const(_) | Expr::Feature(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Add(x, y) => Expr::Add(b(x), b(y)),
            Expr::Sub(x, y) => Expr::Sub(b(x), b(y)),
            Expr::Mul(x, y) => Expr::Mul(b(x), b(y)),
            Expr::Div(x, y) => Expr::Div(b(x), b(y)),
            Expr::Min(x, y) => Expr::Min(b(x), b(y)),
            Expr::Max(x, y) => Expr::Max(b(x), b(y)),
            Expr::Clamp(x, y, z) => Expr::Clamp(b(x), b(y), b(z)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neg_folds_constants() {
        assert_eq!(Expr::neg(Expr::Const(2.0)), Expr::Const(-2.0));
        assert_eq!(
            Expr::neg(Expr::feature(Feature::Vruntime)),
            Expr::Neg(Box::new(Expr::Feature(Feature::Vruntime)))
        );
    }

    #[test]
    fn depth_and_params() {
        let e = Expr::add(
            Expr::neg(Expr::feature(Feature::Vruntime)),
            Expr::mul(Expr::param("k"), Expr::feature(Feature::WaitTime)),
        );
        assert_eq!(e.depth(), 3);
        assert_eq!(e.node_count(), 6);
        assert_eq!(e.params().into_iter().collect::<Vec<_>>(), vec!["k"]);
        let bound = e.bind_params(&|_| Some(0.5));
        assert!(bound.params().is_empty());
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(Feature::from_name(f.name()), Some(f));
        }
        assert_eq!(Feature::from_name("wait_tim"), None);
    }
}
