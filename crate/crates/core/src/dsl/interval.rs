//! Interval arithmetic over declared feature and param ranges.

use std::collections::BTreeMap;

use super::ast::Expr;
use super::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn hull(vals: [f64; 4]) -> Self {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

/// A divisor whose range includes zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsafeDivisor {
    pub divisor: Expr,
    pub range: Interval,
}

/// Range of `expr` when every feature spans its declared range and every
/// param spans `[min, max]`. Divisors that may be zero are reported and
/// treated as the full real line.
pub fn bound(expr: &Expr, params: &BTreeMap<String, Param>, unsafe_divs: &mut Vec<UnsafeDivisor>) -> Interval {
    match expr {
        Expr::Const(c) => Interval::point(*c),
        Expr::Feature(f) => {
            let (lo, hi) = f.range();
            Interval::new(lo, hi)
        }
        Expr::Param(p) => match params.get(p) {
            Some(p) => Interval::new(p.min, p.max),
            None => Interval::new(f64::NEG_INFINITY, f64::INFINITY),
        },
        Expr::Neg(a) => {
            let a = bound(a, params, unsafe_divs);
            Interval::new(-a.hi, -a.lo)
        }
        Expr::Add(a, b) => {
            let (a, b) = (bound(a, params, unsafe_divs), bound(b, params, unsafe_divs));
            Interval::new(a.lo + b.lo, a.hi + b.hi)
        }
        Expr::Sub(a, b) => {
            let (a, b) = (bound(a, params, unsafe_divs), bound(b, params, unsafe_divs));
            Interval::new(a.lo - b.hi, a.hi - b.lo)
        }
        Expr::Mul(a, b) => {
            let (a, b) = (bound(a, params, unsafe_divs), bound(b, params, unsafe_divs));
            mul(a, b)
        }
        Expr::Div(a, b) => {
            let num = bound(a, params, unsafe_divs);
            let den = bound(b, params, unsafe_divs);
            if den.contains_zero() || den.lo.is_nan() || den.hi.is_nan() {
                unsafe_divs.push(UnsafeDivisor {
                    divisor: (**b).clone(),
                    range: den,
                });
                return Interval::new(f64::NEG_INFINITY, f64::INFINITY);
            }
            mul(num, Interval::new(1.0 / den.hi, 1.0 / den.lo))
        }
        Expr::Min(a, b) => {
            let (a, b) = (bound(a, params, unsafe_divs), bound(b, params, unsafe_divs));
            Interval::new(a.lo.min(b.lo), a.hi.min(b.hi))
        }
        Expr::Max(a, b) => {
            let (a, b) = (bound(a, params, unsafe_divs), bound(b, params, unsafe_divs));
            Interval::new(a.lo.max(b.lo), a.hi.max(b.hi))
        }
        Expr::Clamp(x, lo, hi) => {
            let x = bound(x, params, unsafe_divs);
            let lo = bound(lo, params, unsafe_divs);
            let hi = bound(hi, params, unsafe_divs);
            // max(x, lo) then min(.., hi)
            let m = Interval::new(x.lo.max(lo.lo), x.hi.max(lo.hi));
            Interval::new(m.lo.min(hi.lo), m.hi.min(hi.hi))
        }
    }
}

fn mul(a: Interval, b: Interval) -> Interval {
    let prod = |x: f64, y: f64| {
        // 0 * inf is 0 for range purposes
        if x == 0.0 || y == 0.0 {
            0.0
        } else {
            x * y
        }
    };
    Interval::hull([prod(a.lo, b.lo), prod(a.lo, b.hi), prod(a.hi, b.lo), prod(a.hi, b.hi)])
}

/// All divisors in `expr` whose declared range includes zero.
pub fn unsafe_divisors(expr: &Expr, params: &BTreeMap<String, Param>) -> Vec<UnsafeDivisor> {
    let mut out = Vec::new();
    bound(expr, params, &mut out);
    out
}
