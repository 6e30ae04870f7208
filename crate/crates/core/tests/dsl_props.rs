mod common;

use proptest::prelude::*;

use common::{arb_expr, arb_key, arb_priority, arb_state};
use schedplane_core::domain::TaskId;
use schedplane_core::dsl::{builtin, evaluate, parse_expr, parse_policy, rank_order, render_expr, render_policy, Expr, RankKey};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn render_then_parse_is_identity(e in arb_expr()) {
        let text = render_expr(&e);
        let back = parse_expr(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(back, e, "{}", text);
    }

    #[test]
    fn policy_source_round_trips(e in arb_priority()) {
        let mut p = builtin("round_robin").unwrap();
        p.priority = e;
        let back = parse_policy(&render_policy(&p)).unwrap();
        prop_assert_eq!(back.content_id(), p.content_id());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn dispatch_order_is_a_strict_total_order(a in arb_key(), b in arb_key(), c in arb_key()) {
        use std::cmp::Ordering::*;
        let same = |x: &RankKey, y: &RankKey| x.priority.to_bits() == y.priority.to_bits()
            && x.enqueue_time == y.enqueue_time && x.id == y.id;
        // irreflexive and total on distinct keys
        prop_assert_eq!(a.dispatch_cmp(&a), Equal);
        prop_assert_eq!(a.dispatch_cmp(&b) == Equal, same(&a, &b));
        // antisymmetric
        prop_assert_eq!(a.dispatch_cmp(&b), b.dispatch_cmp(&a).reverse());
        // transitive
        if a.dispatch_cmp(&b) == Less && b.dispatch_cmp(&c) == Less {
            prop_assert_eq!(a.dispatch_cmp(&c), Less);
        }
    }

    #[test]
    fn positive_scaling_keeps_the_order(
        e in arb_priority(),
        states in prop::collection::vec(arb_state(), 2..12),
        scale in prop_oneof![(-10i32..10).prop_map(|k| 2f64.powi(k)), 0.001..1000.0f64],
    ) {
        let params = Default::default();
        let scaled = Expr::mul(Expr::Const(scale), e.clone());
        let keys = |expr: &Expr| -> Vec<RankKey> {
            states.iter().enumerate().map(|(i, s)| RankKey {
                priority: evaluate(expr, s, &params).unwrap(),
                enqueue_time: s.enqueue_time,
                id: TaskId(i as u32),
            }).collect()
        };
        let (k1, k2) = (keys(&e), keys(&scaled));
        prop_assume!(k1.iter().all(|k| k.priority.is_finite()));
        prop_assert_eq!(rank_order(&k1), rank_order(&k2));
    }
}
