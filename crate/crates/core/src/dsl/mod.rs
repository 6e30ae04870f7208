//! Policy language: a loop-free expression DSL whose programs rank runnable
//! tasks and size their time slices.
//!
//! A policy source is a sequence of `key = value` lines:
//!
//! ```text
//! name = fair_vruntime
//! description = "fair share by weighted virtual runtime"
//! tags = fair, latency
//! param slice_base = 3000 in [100, 100000]
//! priority = -vruntime
//! slice = slice_base
//! preemptive = true
//! ```
//!
//! `slice = inf` means run-to-completion and is only legal for
//! non-preemptive policies. Expressions support `+ - * /`, unary minus,
//! parentheses and the functions `min(a, b)`, `max(a, b)` and
//! `clamp(x, lo, hi)`. Identifiers are task features or declared params.

mod ast;
mod builtins;
mod compose;
mod eval;
pub mod interval;
mod parser;
mod render;

pub use ast::{Expr, Feature, COUNT_MAX, TIME_MAX};
pub use builtins::{builtin, BUILTIN_NAMES};
pub use compose::{apply_patch, compose, fragment_library, Fragment, PatchEdit};
pub use eval::{evaluate, rank_order, BoundPolicy, RankKey};
pub use parser::{parse_expr, parse_policy};
pub use render::{render_expr, render_policy};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::canonical_hash;

/// Lower clamp for evaluated slices, in microseconds.
pub const SLICE_MIN: f64 = 100.0;
/// Upper clamp for evaluated slices, in microseconds.
pub const SLICE_MAX: f64 = 100_000.0;

pub const RESERVED_WORDS: [&str; 4] = ["min", "max", "clamp", "inf"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl Param {
    pub fn new(value: f64, min: f64, max: f64) -> Self {
        Param { value, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
    pub priority: Expr,
    /// `None` is an unbounded slice (run to completion).
    #[serde(default)]
    pub slice: Option<Expr>,
    pub preemptive: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("duplicate param `{0}`")]
    DuplicateParam(String),
    #[error("invalid policy: {0}")]
    InvalidSpec(String),
    #[error("unknown builtin policy `{0}`")]
    UnknownBuiltin(String),
    #[error("composition needs at least one fragment")]
    EmptyComposition,
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("division by zero")]
    DivisionByZero,
}

impl PolicySpec {
    /// Content hash of the canonical JSON form; this is the repository id.
    pub fn content_id(&self) -> String {
        canonical_hash(self)
    }

    /// Binding and range checks shared by the parser, patches and the
    /// repository. Divisor safety is left to the verifier.
    pub fn validate(&self) -> Result<(), DslError> {
        if self.name.trim().is_empty() {
            return Err(DslError::InvalidSpec("policy name is empty".into()));
        }
        for (name, p) in &self.params {
            if Feature::from_name(name).is_some() || RESERVED_WORDS.contains(&name.as_str()) {
                return Err(DslError::InvalidSpec(format!(
                    "param `{name}` shadows a feature or keyword"
                )));
            }
            if !is_identifier(name) {
                return Err(DslError::InvalidSpec(format!("`{name}` is not an identifier")));
            }
            if !(p.value.is_finite() && p.min.is_finite() && p.max.is_finite()) {
                return Err(DslError::InvalidSpec(format!("param `{name}` is not finite")));
            }
            if p.min > p.max || p.value < p.min || p.value > p.max {
                return Err(DslError::InvalidSpec(format!(
                    "param `{name}` = {} outside [{}, {}]",
                    p.value, p.min, p.max
                )));
            }
        }
        for expr in std::iter::once(&self.priority).chain(self.slice.as_ref()) {
            for p in expr.params() {
                if !self.params.contains_key(p) {
                    return Err(DslError::UnknownIdentifier(p.to_string()));
                }
            }
            let mut finite = true;
            expr.visit(&mut |e| {
                if let Expr::Const(c) = e {
                    finite &= c.is_finite();
                }
            });
            if !finite {
                return Err(DslError::InvalidSpec("non-finite constant".into()));
            }
        }
        if self.slice.is_none() && self.preemptive {
            return Err(DslError::InvalidSpec(
                "an unbounded slice requires preemptive = false".into(),
            ));
        }
        Ok(())
    }

    pub fn param_value(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.value)
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_unbound_and_range() {
        let mut p = builtin("fair_vruntime").unwrap();
        assert!(p.validate().is_ok());
        p.params.get_mut("slice_base").unwrap().value = 1e9;
        assert!(matches!(p.validate(), Err(DslError::InvalidSpec(_))));

        let mut p = builtin("fair_vruntime").unwrap();
        p.params.clear();
        assert_eq!(p.validate(), Err(DslError::UnknownIdentifier("slice_base".into())));

        let mut p = builtin("fifo").unwrap();
        p.preemptive = true;
        assert!(matches!(p.validate(), Err(DslError::InvalidSpec(_))));
    }

    #[test]
    fn content_id_tracks_changes() {
        let a = builtin("ljf").unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_id(), b.content_id());
        b.description.push('!');
        assert_ne!(a.content_id(), b.content_id());
    }
}
