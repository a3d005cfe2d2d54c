use proptest::prelude::*;
use supergeo::expr::{Func, ScalarExpr};

const N: usize = 2;

fn arb_expr() -> impl Strategy<Value = ScalarExpr> {
    let leaf =
        prop_oneof![(0u32..40).prop_map(|c| ScalarExpr::Const(c as f64 / 8.0)), (0..N).prop_map(ScalarExpr::Var),];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let inner2 = inner.clone();
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ScalarExpr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ScalarExpr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ScalarExpr::Mul(Box::new(a), Box::new(b))),
            // denominators of the form 2 + e^2 keep evaluation away from poles
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ScalarExpr::Div(
                Box::new(a),
                Box::new(ScalarExpr::Add(Box::new(ScalarExpr::Const(2.0)), Box::new(ScalarExpr::Pow(Box::new(b), 2))))
            )),
            (inner.clone(), -2i32..4).prop_map(|(a, k)| ScalarExpr::Pow(Box::new(a), k)),
            // the parser folds a negated literal into the constant
            inner.clone().prop_map(|a| match a {
                ScalarExpr::Const(c) => ScalarExpr::Const(-c),
                a => ScalarExpr::Neg(Box::new(a)),
            }),
            (prop::sample::select(vec![Func::Sin, Func::Cos, Func::Exp]), inner2)
                .prop_map(|(f, a)| ScalarExpr::Call(f, Box::new(a))),
            inner.prop_map(|a| ScalarExpr::Call(
                Func::Log,
                Box::new(ScalarExpr::Add(Box::new(ScalarExpr::Const(1.0)), Box::new(ScalarExpr::Pow(Box::new(a), 2))))
            )),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, N)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 400, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn derivative_matches_central_difference(e in arb_expr(), x in point(), i in 0..N) {
        let h = 1e-6;
        let f0 = e.eval(&x);
        prop_assume!(f0.as_ref().is_ok_and(|v| v.abs() < 1e3));
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let (Ok(fp), Ok(fm)) = (e.eval(&xp), e.eval(&xm)) else { return Err(TestCaseError::reject("off domain")) };
        let fd = (fp - fm) / (2.0 * h);
        let d = e.diff(i).eval(&x);
        prop_assume!(d.as_ref().is_ok_and(|v| v.abs() < 1e3));
        let d = d.unwrap();
        prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + d.abs().max(f0.unwrap().abs())), "{e}: {d} vs {fd}");
    }

    #[test]
    fn parse_of_render_is_identity(e in arb_expr()) {
        let text = e.to_string();
        prop_assert_eq!(ScalarExpr::parse(&text, N).unwrap(), e);
    }

    #[test]
    fn mixed_partials_commute(e in arb_expr(), x in point()) {
        let a = e.diff(0).diff(1).eval(&x);
        let b = e.diff(1).diff(0).eval(&x);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assume!(a.is_finite() && a.abs() < 1e6);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn derivative_examples() {
    let e = ScalarExpr::parse("1/(1+x1)", 1).unwrap();
    let d = e.diff(0).eval(&[0.0]).unwrap();
    assert!((d + 1.0).abs() < 1e-12);
    let h = 1e-6;
    let fd = (e.eval(&[h]).unwrap() - e.eval(&[-h]).unwrap()) / (2.0 * h);
    assert!((fd - d).abs() < 1e-8);
    assert_eq!(ScalarExpr::parse("sin(x1)", 2).unwrap().diff(1), ScalarExpr::zero());
}

#[test]
fn out_of_range_variable_is_rejected() {
    let err = ScalarExpr::parse("x3", 2).unwrap_err();
    assert!(err.to_string().contains("x3") || err.to_string().contains("range"), "{err}");
}
