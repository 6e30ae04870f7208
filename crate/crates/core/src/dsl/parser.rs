use std::collections::BTreeMap;

use super::ast::{Expr, Feature};
use super::{is_identifier, DslError, Param, PolicySpec, RESERVED_WORDS};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    line: usize,
    col0: usize,
}

impl Lexer<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> DslError {
        DslError::Syntax {
            line: self.line,
            column: self.col0 + offset + 1,
            message: message.into(),
        }
    }

    fn tokens(&self) -> Result<Vec<(Tok, usize)>, DslError> {
        let bytes = self.src.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '0'..='9' | '.' => {
                    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                        i += 1;
                    }
                    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && bytes[j].is_ascii_digit() {
                            while j < bytes.len() && bytes[j].is_ascii_digit() {
                                j += 1;
                            }
                            i = j;
                        }
                    }
                    let text = &self.src[start..i];
                    let v: f64 = text
                        .parse()
                        .map_err(|_| self.err(start, format!("bad number `{text}`")))?;
                    if !v.is_finite() {
                        return Err(self.err(start, format!("number `{text}` is not finite")));
                    }
                    out.push((Tok::Num(v), start));
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                        i += 1;
                    }
                    out.push((Tok::Ident(self.src[start..i].to_string()), start));
                    continue;
                }
                other => return Err(self.err(start, format!("unexpected character `{other}`"))),
            };
            out.push((tok, start));
            i += 1;
        }
        Ok(out)
    }
}

struct ExprParser<'a> {
    lexer: &'a Lexer<'a>,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, o)| *o)
            .unwrap_or(self.lexer.src.len())
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DslError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.lexer.err(self.offset(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expr::neg(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, DslError> {
        let offset = self.offset();
        let Some((tok, _)) = self.toks.get(self.pos).cloned() else {
            return Err(self.lexer.err(offset, "unexpected end of expression"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let arity = match name.as_str() {
                        "min" | "max" => 2,
                        "clamp" => 3,
                        _ => return Err(self.lexer.err(offset, format!("unknown function `{name}`"))),
                    };
                    let mut args = Vec::with_capacity(arity);
                    for k in 0..arity {
                        if k > 0 {
                            self.expect(Tok::Comma, "`,`")?;
                        }
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    let mut it = args.into_iter();
                    let mut next = || it.next().expect("arity checked");
                    return Ok(match name.as_str() {
                        "min" => Expr::min(next(), next()),
                        "max" => Expr::max(next(), next()),
                        _ => Expr::clamp(next(), next(), next()),
                    });
                }
                if RESERVED_WORDS.contains(&name.as_str()) {
                    return Err(self.lexer.err(offset, format!("`{name}` is reserved")));
                }
                Ok(match Feature::from_name(&name) {
                    Some(f) => Expr::Feature(f),
                    None => Expr::Param(name),
                })
            }
            other => Err(self.lexer.err(offset, format!("unexpected token {other:?}"))),
        }
    }
}

fn parse_expr_at(src: &str, line: usize, col0: usize) -> Result<Expr, DslError> {
    let lexer = Lexer { src, line, col0 };
    let toks = lexer.tokens()?;
    let mut p = ExprParser {
        lexer: &lexer,
        toks,
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(lexer.err(p.offset(), "trailing input"));
    }
    Ok(e)
}

/// Parse a bare expression. Identifiers that are not features become
/// param references; binding is checked by [`PolicySpec::validate`].
pub fn parse_expr(src: &str) -> Result<Expr, DslError> {
    parse_expr_at(src, 1, 0)
}

fn unquote(raw: &str, line: usize, col0: usize) -> Result<String, DslError> {
    let err = |m: &str| DslError::Syntax {
        line,
        column: col0 + 1,
        message: m.to_string(),
    };
    if !raw.starts_with('"') {
        return Ok(raw.to_string());
    }
    if raw.len() < 2 || !raw.ends_with('"') {
        return Err(err("unterminated string"));
    }
    let mut out = String::new();
    let mut chars = raw[1..raw.len() - 1].chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('n') => out.push('\n'),
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                _ => return Err(err("bad escape in string")),
            },
            '"' => return Err(err("unescaped quote in string")),
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Parse a policy source into a validated [`PolicySpec`].
pub fn parse_policy(source: &str) -> Result<PolicySpec, DslError> {
    let mut name = None;
    let mut description = None;
    let mut tags = None;
    let mut params = BTreeMap::new();
    let mut priority = None;
    let mut slice: Option<Option<Expr>> = None;
    let mut preemptive = None;

    for (idx, raw_line) in source.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw_line.trim_start();
        let indent = raw_line.len() - trimmed.len();
        let content = trimmed.trim_end();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let syntax = |col: usize, m: String| DslError::Syntax {
            line,
            column: col + 1,
            message: m,
        };
        let Some(eq) = content.find('=') else {
            return Err(syntax(indent, "expected `key = value`".into()));
        };
        let key = content[..eq].trim();
        let value = content[eq + 1..].trim();
        let value_col = indent + eq + 1 + (content[eq + 1..].len() - content[eq + 1..].trim_start().len());

        if let Some(pname) = key.strip_prefix("param ").map(str::trim) {
            if !is_identifier(pname) {
                return Err(syntax(indent, format!("bad param name `{pname}`")));
            }
            if params.contains_key(pname) {
                return Err(DslError::DuplicateParam(pname.to_string()));
            }
            // VALUE in [MIN, MAX]
            let parse_num = |s: &str, col: usize| -> Result<f64, DslError> {
                match parse_expr_at(s.trim(), line, col)? {
                    Expr::Const(c) => Ok(c),
                    _ => Err(syntax(col, format!("expected a number, found `{}`", s.trim()))),
                }
            };
            let Some(in_pos) = value.find(" in ") else {
                return Err(syntax(value_col, "expected `value in [min, max]`".into()));
            };
            let range = value[in_pos + 4..].trim();
            let inner = range
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| syntax(value_col + in_pos + 4, "expected `[min, max]`".into()))?;
            let Some((lo, hi)) = inner.split_once(',') else {
                return Err(syntax(value_col + in_pos + 4, "expected `[min, max]`".into()));
            };
            let v = parse_num(&value[..in_pos], value_col)?;
            let lo = parse_num(lo, value_col + in_pos + 5)?;
            let hi = parse_num(hi, value_col + in_pos + 5)?;
            params.insert(pname.to_string(), Param::new(v, lo, hi));
            continue;
        }

        let dup = |seen: bool| -> Result<(), DslError> {
            if seen {
                Err(syntax(indent, format!("duplicate key `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "name" => {
                dup(name.is_some())?;
                name = Some(unquote(value, line, value_col)?);
            }
            "description" => {
                dup(description.is_some())?;
                description = Some(unquote(value, line, value_col)?);
            }
            "tags" => {
                dup(tags.is_some())?;
                tags = Some(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(String::from)
                        .collect::<Vec<_>>(),
                );
            }
            "priority" => {
                dup(priority.is_some())?;
                priority = Some(parse_expr_at(value, line, value_col)?);
            }
            "slice" => {
                dup(slice.is_some())?;
                slice = Some(if value == "inf" {
                    None
                } else {
                    Some(parse_expr_at(value, line, value_col)?)
                });
            }
            "preemptive" => {
                dup(preemptive.is_some())?;
                preemptive = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(syntax(value_col, format!("expected true/false, found `{other}`"))),
                });
            }
            other => return Err(syntax(indent, format!("unknown key `{other}`"))),
        }
    }

    let priority = priority.ok_or_else(|| DslError::Syntax {
        line: source.lines().count().max(1),
        column: 1,
        message: "missing `priority = ...`".into(),
    })?;
    let spec = PolicySpec {
        name: name.unwrap_or_else(|| "unnamed".to_string()),
        description: description.unwrap_or_default(),
        tags: tags.unwrap_or_default(),
        params,
        priority,
        slice: slice.unwrap_or(None),
        preemptive: preemptive.unwrap_or(false),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_is_negated_arrival() {
        let p = parse_policy("name = fifo\npriority = -arrival_time\n").unwrap();
        assert_eq!(p.priority, Expr::neg(Expr::feature(Feature::ArrivalTime)));
        assert!(!p.preemptive);
        assert!(p.slice.is_none());
    }

    #[test]
    fn ljf_reads_expected_runtime() {
        let p = parse_policy("name = ljf\npriority = expected_runtime").unwrap();
        assert_eq!(p.priority, Expr::Feature(Feature::ExpectedRuntime));
    }

    #[test]
    fn typo_is_unknown_identifier() {
        let err = parse_policy("name = x\npriority = -vruntime + 0.5 * wait_tim").unwrap_err();
        assert_eq!(err, DslError::UnknownIdentifier("wait_tim".into()));
    }

    #[test]
    fn precedence_and_functions() {
        let e = parse_expr("-vruntime + 0.5 * wait_time").unwrap();
        assert_eq!(
            e,
            Expr::add(
                Expr::neg(Expr::feature(Feature::Vruntime)),
                Expr::mul(Expr::Const(0.5), Expr::feature(Feature::WaitTime))
            )
        );
        let e = parse_expr("clamp(a - b - c, min(1, 2), max(3e2, -4))").unwrap();
        let Expr::Clamp(x, lo, hi) = e else { panic!() };
        assert_eq!(
            *x,
            Expr::sub(Expr::sub(Expr::param("a"), Expr::param("b")), Expr::param("c"))
        );
        assert_eq!(*lo, Expr::min(Expr::Const(1.0), Expr::Const(2.0)));
        assert_eq!(*hi, Expr::max(Expr::Const(300.0), Expr::Const(-4.0)));
    }

    #[test]
    fn params_and_full_header() {
        let src = r#"
# fair share
name = fair
description = "weighted \"fair\" share"
tags = fair, latency
param slice_base = 3000 in [100, 100000]
priority = -vruntime
slice = slice_base
preemptive = true
"#;
        let p = parse_policy(src).unwrap();
        assert_eq!(p.description, "weighted \"fair\" share");
        assert_eq!(p.tags, vec!["fair", "latency"]);
        assert_eq!(p.params["slice_base"], Param::new(3000.0, 100.0, 100000.0));
        assert_eq!(p.slice, Some(Expr::param("slice_base")));
    }

    #[test]
    fn errors_carry_positions() {
        match parse_policy("name = x\npriority = 1 +* 2") {
            Err(DslError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 15);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_policy("name = x\npriority = (1"),
            Err(DslError::Syntax { line: 2, .. })
        ));
        assert!(matches!(parse_policy("name = x\n"), Err(DslError::Syntax { .. })));
        assert!(matches!(
            parse_policy("name = x\nfoo = 1\npriority = 1"),
            Err(DslError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_policy("priority = 1\npriority = 2"),
            Err(DslError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_param_rejected() {
        let src = "name = x\nparam k = 1 in [0, 2]\nparam k = 1 in [0, 2]\npriority = k";
        assert_eq!(parse_policy(src), Err(DslError::DuplicateParam("k".into())));
    }

    #[test]
    fn unbounded_slice_needs_non_preemptive() {
        assert!(matches!(
            parse_policy("name = x\npriority = 1\nslice = inf\npreemptive = true"),
            Err(DslError::InvalidSpec(_))
        ));
    }
}
