//! Property-based checks: expression printing/parsing round-trips,
//! symbolic differentiation against finite differences, Wronskian
//! constancy of the integrator, and forward/backward consistency.

use proptest::prelude::*;

use krein_lab::expr::Expression;
use krein_lab::ode::{integrate, wronskian, IntOpts, QuasiState};
use krein_lab::problem::{Endpoint, SLProblem};

fn expr(s: &str) -> Expression {
    Expression::parse(s).unwrap()
}

/// Small random expression trees that stay finite and smooth on
/// [0.1, 0.9]: constants, x, sums, products, and bounded unary wraps.
fn arb_expression() -> impl Strategy<Value = Expression> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(|v| Expression::number((v * 16.0).round() / 16.0)),
        Just(Expression::var()),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(&b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(&b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(&b)),
            // sin(a) keeps magnitudes bounded for deeper trees; it is
            // built by printing and reparsing since composition is not
            // part of the public constructor set.
            inner.clone().prop_map(|a| {
                Expression::parse(&format!("sin({a})")).expect("composed expression parses")
            }),
            inner.prop_map(|a| a.neg()),
        ]
    })
}

fn sample_points() -> Vec<f64> {
    (1..=9).map(|i| 0.1 * i as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expression_display_round_trips(e in arb_expression()) {
        let printed = e.to_string();
        let reparsed = Expression::parse(&printed)
            .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
        for x in sample_points() {
            let a = e.evaluate(x).unwrap();
            let b = reparsed.evaluate(x).unwrap();
            prop_assert!(
                (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                "x = {x}: {a} vs {b} for `{printed}`"
            );
        }
    }

    #[test]
    fn symbolic_derivative_matches_finite_differences(e in arb_expression()) {
        let de = e.differentiate();
        let h = 1e-5;
        for x in sample_points() {
            let sym = de.evaluate(x).unwrap();
            let fd = (e.evaluate(x + h).unwrap() - e.evaluate(x - h).unwrap()) / (2.0 * h);
            // Central differences are O(h^2) with a curvature constant
            // bounded by the tree magnitude; use a mixed tolerance.
            let scale = 1.0 + sym.abs() + e.evaluate(x).unwrap().abs();
            prop_assert!(
                (sym - fd).abs() <= 1e-6 * scale + 1e-4 * scale * scale * h,
                "x = {x}: symbolic {sym} vs fd {fd} for `{e}`"
            );
        }
    }

    #[test]
    fn wronskian_is_constant(
        qc in -4.0..4.0f64,
        lambda in -2.0..8.0f64,
        pc in 0.25..3.0f64,
    ) {
        // Constant-coefficient problem on [0, 1]; the Wronskian of any
        // two solutions of the same equation is independent of x.
        let prob = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            expr("1"),
            Expression::number(pc),
            Expression::number(qc),
            None,
        );
        let opts = IntOpts::with_tol(1e-11);
        let t1 = integrate(&prob, lambda, false, QuasiState::new(0.0, 1.0, 0.0), 1.0, &opts)
            .unwrap();
        let t2 = integrate(&prob, lambda, false, QuasiState::new(0.0, 0.0, 1.0), 1.0, &opts)
            .unwrap();
        let w0 = wronskian(&t1, &t2, 0.0);
        prop_assert!((w0 - 1.0).abs() < 1e-9, "W(0) = {w0}");
        for x in sample_points() {
            let w = wronskian(&t1, &t2, x);
            prop_assert!((w - w0).abs() < 1e-8 * (1.0 + w0.abs()), "W({x}) = {w}");
        }
    }

    #[test]
    fn forward_backward_reversal(
        qc in -4.0..4.0f64,
        lambda in -2.0..8.0f64,
    ) {
        // Integrating forward and then re-launching backward from the
        // endpoint state returns to the initial data.
        let prob = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            expr("1"),
            expr("1"),
            Expression::number(qc),
            None,
        );
        let opts = IntOpts::with_tol(1e-11);
        let fwd = integrate(&prob, lambda, false, QuasiState::new(0.0, 1.0, 0.5), 1.0, &opts)
            .unwrap();
        let (u1, pu1) = fwd.eval(1.0);
        let bwd = integrate(&prob, lambda, false, QuasiState::new(1.0, u1, pu1), 0.0, &opts)
            .unwrap();
        let (u0, pu0) = bwd.eval(0.0);
        prop_assert!(
            (u0 - 1.0).abs() < 1e-7 && (pu0 - 0.5).abs() < 1e-7,
            "returned to ({u0}, {pu0})"
        );
    }
}
