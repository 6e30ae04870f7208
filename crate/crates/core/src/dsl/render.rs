use std::fmt::Write;

use super::ast::Expr;
use super::PolicySpec;

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;

fn number(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{c:.0}")
    } else {
        // Debug formatting is the shortest string that parses back exactly.
        format!("{c:?}")
    }
}

fn write_expr(e: &Expr, min_prec: u8, out: &mut String) {
    let (prec, text) = match e {
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
            (PREC_UNARY, format!("-{}", number(c.abs())))
        }
        Expr::Const(c) => (u8::MAX, number(*c)),
        Expr::Feature(f) => (u8::MAX, f.name().to_string()),
        Expr::Param(p) => (u8::MAX, p.clone()),
        Expr::Neg(a) => {
            let mut s = String::from("-");
            write_expr(a, PREC_UNARY, &mut s);
            (PREC_UNARY, s)
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            let op = if matches!(e, Expr::Add(..)) { '+' } else { '-' };
            let mut s = String::new();
            write_expr(a, PREC_ADD, &mut s);
            let _ = write!(s, " {op} ");
            write_expr(b, PREC_ADD + 1, &mut s);
            (PREC_ADD, s)
        }
        Expr::Mul(a, b) | Expr::Div(a, b) => {
            let op = if matches!(e, Expr::Mul(..)) { '*' } else { '/' };
            let mut s = String::new();
            write_expr(a, PREC_MUL, &mut s);
            let _ = write!(s, " {op} ");
            write_expr(b, PREC_MUL + 1, &mut s);
            (PREC_MUL, s)
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            let f = if matches!(e, Expr::Min(..)) { "min" } else { "max" };
            let mut s = format!("{f}(");
            write_expr(a, 0, &mut s);
            s.push_str(", ");
            write_expr(b, 0, &mut s);
            s.push(')');
            (u8::MAX, s)
        }
        Expr::Clamp(x, lo, hi) => {
            let mut s = String::from("clamp(");
            write_expr(x, 0, &mut s);
            s.push_str(", ");
            write_expr(lo, 0, &mut s);
            s.push_str(", ");
            write_expr(hi, 0, &mut s);
            s.push(')');
            (u8::MAX, s)
        }
    };
    if prec < min_prec {
        out.push('(');
        out.push_str(&text);
        out.push(')');
    } else {
        out.push_str(&text);
    }
}

/// Render an expression with the minimal parentheses needed to parse back
/// to the identical tree.
pub fn render_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, 0, &mut out);
    out
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Render a policy as DSL source accepted by [`super::parse_policy`].
pub fn render_policy(p: &PolicySpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {}", quote(&p.name));
    let _ = writeln!(out, "description = {}", quote(&p.description));
    if !p.tags.is_empty() {
        let _ = writeln!(out, "tags = {}", p.tags.join(", "));
    }
    for (name, param) in &p.params {
        let _ = writeln!(
            out,
            "param {name} = {} in [{}, {}]",
            render_expr(&Expr::Const(param.value)),
            render_expr(&Expr::Const(param.min)),
            render_expr(&Expr::Const(param.max)),
        );
    }
    let _ = writeln!(out, "priority = {}", render_expr(&p.priority));
    match &p.slice {
        Some(s) => {
            let _ = writeln!(out, "slice = {}", render_expr(s));
        }
        None => out.push_str("slice = inf\n"),
    }
    let _ = writeln!(out, "preemptive = {}", p.preemptive);
    out
}

#[cfg(test)]
mod tests {
    use super::super::{builtin, parse_expr, parse_policy, BUILTIN_NAMES};
    use super::*;

    #[test]
    fn minimal_parentheses() {
        for src in [
            "-vruntime + 0.5 * wait_time",
            "a - (b - c)",
            "(a + b) * c",
            "a / (b * c)",
            "--x",
            "-(x * y)",
            "a - -2",
            "-2 * x",
            "clamp(x, 1, max(2, -3))",
            "0.001 * wait_time + 1e300",
        ] {
            let e = parse_expr(src).unwrap();
            let rendered = render_expr(&e);
            assert_eq!(parse_expr(&rendered).unwrap(), e, "{src} -> {rendered}");
        }
        assert_eq!(render_expr(&parse_expr("(a - b) - c").unwrap()), "a - b - c");
    }

    #[test]
    fn builtins_round_trip_through_source() {
        for name in BUILTIN_NAMES {
            let p = builtin(name).unwrap();
            assert_eq!(parse_policy(&render_policy(&p)).unwrap(), p, "{name}");
        }
    }
}
