//! Acceptance suite: ten independent criteria, one pass/fail line each.
//! Every numeric target is either a closed-form value or cross-checked
//! by an independent discretization.

use std::f64::consts::PI;
use std::time::Instant;

use krein_lab::classify::{
    classify_endpoint, jacobi_residual, kalf_check, principal_pair, EndpointKind, GaugeFunction,
};
use krein_lab::expr::Expression;
use krein_lab::extensions::{
    kernel_basis, lc_matrix_family, lp_family, sectorial_krein, singular_values_2x2,
    ExtensionSpec, MatOrInf, ParamOrInf,
};
use krein_lab::forms::{
    friedrichs_form, rayleigh_check, sector_check, Sector, TrialFunction,
};
use krein_lab::ode::{integrate, Calibrated, IntOpts, LinComb, QuasiState};
use krein_lab::oracle::{discretize, eigenvalues_discrete, DiscreteBc};
use krein_lab::problem::{Endpoint, SLProblem, TruncationPolicy, Verdict};
use krein_lab::spectral::{
    eigenfunction, eigenvalues_bracket, eigenvalues_real, eigenvalues_sectorial, Cx, RealOpts,
    SpectralError,
};

fn expr(s: &str) -> Expression {
    Expression::parse(s).unwrap()
}

fn problem(a: f64, m: Endpoint, k: &str, p: &str, q1: &str, q2: Option<&str>) -> SLProblem {
    SLProblem::new(a, m, expr(k), expr(p), expr(q1), q2.map(expr))
}

fn half_line_q1() -> SLProblem {
    problem(0.0, Endpoint::Infinite, "1", "1", "1", None)
}

fn regular_q1() -> SLProblem {
    problem(0.0, Endpoint::Finite(1.0), "1", "1", "1", None)
}

fn report(criterion: usize, desc: &str, result: Result<(), String>) {
    match result {
        Ok(()) => println!("criterion {criterion:2}: PASS - {desc}"),
        Err(e) => {
            println!("criterion {criterion:2}: FAIL - {desc}: {e}");
            panic!("criterion {criterion} failed: {e}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn to_str<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[test]
fn criterion_01_theorem1_family_closed_form() {
    report(1, "half-line Robin family matches 1 - (1 - l/2)^2", (|| {
        let start = Instant::now();
        // Cutoffs up to X = 40 as stated; the last two must be close
        // enough for the truncation-drift gate.
        let prob = half_line_q1().with_truncation(TruncationPolicy {
            cutoffs: vec![10.0, 20.0, 30.0, 40.0],
            tol: 1e-9,
        });
        let basis = kernel_basis(&prob).map_err(to_str)?;
        let opts = RealOpts::default();
        for l in [0.0, 0.5, 1.0, 1.5] {
            let spec = lp_family(&prob, &basis, ParamOrInf::Finite(l)).map_err(to_str)?;
            let s = eigenvalues_real(&prob, &spec, (-1e-4, 0.9999), 1, &opts).map_err(to_str)?;
            let got = s.eigenvalues[0].lambda.re;
            let expect = 1.0 - (1.0 - l / 2.0) * (1.0 - l / 2.0);
            ensure!((got - expect).abs() < 1e-6, "l = {l}: {got} vs {expect}");
        }
        // No eigenvalue below the essential floor 1 for l >= 2 and for
        // the Friedrichs extension.
        for spec in [
            lp_family(&prob, &basis, ParamOrInf::Finite(2.0)).map_err(to_str)?,
            lp_family(&prob, &basis, ParamOrInf::Finite(3.0)).map_err(to_str)?,
            ExtensionSpec::Friedrichs,
        ] {
            match eigenvalues_real(&prob, &spec, (-1e-4, 0.9999), 1, &opts) {
                Err(SpectralError::WindowExhausted { spectrum, .. }) => {
                    ensure!(
                        spectrum.eigenvalues.is_empty(),
                        "unexpected eigenvalue below the floor"
                    );
                }
                other => return Err(format!("expected exhaustion, got {other:?}")),
            }
        }
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs_f64() < 5.0,
            "family sweep took {elapsed:?} (budget 5 s)"
        );
        Ok(())
    })());
}

#[test]
fn criterion_02_regular_dirichlet_closed_form() {
    report(2, "Dirichlet -u'' + u on [0,1] gives 1 + n^2 pi^2", (|| {
        let prob = regular_q1();
        let s = eigenvalues_real(
            &prob,
            &ExtensionSpec::Friedrichs,
            (0.5, 260.0),
            5,
            &RealOpts::default(),
        )
        .map_err(to_str)?;
        ensure!(s.eigenvalues.len() == 5, "found {}", s.eigenvalues.len());
        for (i, e) in s.eigenvalues.iter().enumerate() {
            let n = (i + 1) as f64;
            let expect = 1.0 + n * n * PI * PI;
            let rel = (e.lambda.re - expect).abs() / expect;
            ensure!(rel < 1e-8, "n = {n}: rel err {rel:e}");
        }
        Ok(())
    })());
}

#[test]
fn criterion_03_krein_multiplicity() {
    report(3, "B = 0 yields lambda = 0 with rank-deficiency 2 of M(0)", (|| {
        let prob = regular_q1();
        let basis = kernel_basis(&prob).map_err(to_str)?;
        let spec =
            lc_matrix_family(&prob, &basis, MatOrInf::Finite([[0.0; 2]; 2])).map_err(to_str)?;
        let s = eigenvalues_bracket(&prob, &spec, (-0.5, 5.0), 2, 40).map_err(to_str)?;
        ensure!(s.eigenvalues.len() == 2, "found {}", s.eigenvalues.len());
        ensure!(
            s.eigenvalues.iter().all(|e| e.lambda.norm() < 1e-8),
            "eigenvalues {:?} not both at 0",
            s.eigenvalues
        );
        // Rank deficiency of the condition matrix itself: both singular
        // values of M(0) vanish relative to the matrix scale at a
        // reference lambda.
        let m_at = |lambda: f64| -> Result<[[f64; 2]; 2], String> {
            let opts = IntOpts::with_tol(1e-11);
            let to = prob.truncation.last();
            let mut m = [[0.0f64; 2]; 2];
            for (j, data) in [(0usize, (1.0, 0.0)), (1usize, (0.0, 1.0))] {
                let traj = integrate(
                    &prob,
                    lambda,
                    false,
                    QuasiState::new(prob.a, data.0, data.1),
                    to,
                    &opts,
                )
                .map_err(to_str)?;
                let v = LinComb::single(Calibrated::plain(traj));
                let rows = spec.bracket_residuals(&prob, &v).map_err(to_str)?;
                m[0][j] = rows[0];
                m[1][j] = rows[1];
            }
            Ok(m)
        };
        let m0 = m_at(0.0)?;
        let mref = m_at(1.0)?;
        let (s0_max, s0_min) = singular_values_2x2(&m0);
        let (sref_max, _) = singular_values_2x2(&mref);
        ensure!(
            s0_max < 1e-8 * sref_max && s0_min < 1e-8 * sref_max,
            "singular values {s0_max:e}, {s0_min:e} vs scale {sref_max:e}"
        );
        Ok(())
    })());
}

#[test]
fn criterion_04_family_monotonicity() {
    report(4, "lambda_1(T_l) nondecreasing over l in 0, 0.25, ..., 1.75", (|| {
        let prob = half_line_q1();
        let basis = kernel_basis(&prob).map_err(to_str)?;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..8 {
            let l = i as f64 * 0.25;
            let spec = lp_family(&prob, &basis, ParamOrInf::Finite(l)).map_err(to_str)?;
            let s = eigenvalues_real(&prob, &spec, (-1e-4, 0.9999), 1, &RealOpts::default())
                .map_err(to_str)?;
            let got = s.eigenvalues[0].lambda.re;
            ensure!(
                got >= prev - 1e-8,
                "l = {l}: {got} < previous {prev} beyond tolerance"
            );
            prev = got;
        }
        Ok(())
    })());
}

#[test]
fn criterion_05_jacobi_identity() {
    report(5, "Jacobi factorization residual < 1e-9 on three gauges", (|| {
        let xs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let cases: [(&str, &str, &str); 3] = [
            ("1", "exp(-x/2)", "sin(x)"),
            ("1+x*x", "exp(-x)", "x*x*(1-x)"),
            ("2+sin(x)", "1+x/2", "cos(x)"),
        ];
        for (p, h, u) in cases {
            let prob = problem(0.0, Endpoint::Finite(1.0), "1", p, "1", None);
            let gauge = GaugeFunction::from_expr(expr(h), &prob.p);
            let res = jacobi_residual(&prob, &gauge, &expr(u), &xs).map_err(to_str)?;
            ensure!(res < 1e-9, "p = {p}, h = {h}: residual {res:e}");
        }
        Ok(())
    })());
}

#[test]
fn criterion_06_classification_and_principal_pairs() {
    report(6, "endpoint kinds and principal-pair invariants", (|| {
        let lp = half_line_q1();
        let lc = problem(
            0.0,
            Endpoint::Finite(1.0),
            "1",
            "1",
            "-(3/16)/((1-x)*(1-x))",
            None,
        );
        let reg = regular_q1();
        let expectations = [
            (&lp, EndpointKind::LimitPoint, "limit point"),
            (&lc, EndpointKind::LimitCircle, "limit circle"),
            (&reg, EndpointKind::Regular, "regular"),
        ];
        for (prob, kind, name) in expectations {
            let rep = classify_endpoint(prob, 0.0).map_err(to_str)?;
            ensure!(rep.kind == kind, "{name}: classified as {:?}", rep.kind);
            // Principal-pair invariants: (1) int 1/(p f^2) diverges,
            // (2) int 1/(p g^2) converges, (3) f/g -> 0, (4) both
            // positive on [s, m).
            let pair = principal_pair(prob).map_err(to_str)?;
            ensure!(
                matches!(pair.inv_sq_f, Verdict::Diverges { .. }),
                "{name}: 1/(p f^2) verdict {:?}",
                pair.inv_sq_f
            );
            ensure!(
                matches!(pair.inv_sq_g, Verdict::Converges { .. }),
                "{name}: 1/(p g^2) verdict {:?}",
                pair.inv_sq_g
            );
            let ratios: Vec<f64> = pair.ratio_samples.iter().map(|&(_, r)| r).collect();
            ensure!(
                ratios.windows(2).all(|w| w[1] <= w[0] + 1e-12)
                    && *ratios.last().unwrap() < 0.5 * ratios[0],
                "{name}: f/g samples not decreasing to 0: {ratios:?}"
            );
            let hi = prob.truncation.last();
            for i in 0..8 {
                let x = pair.s + (hi - pair.s) * (i as f64 + 0.5) / 8.0;
                ensure!(
                    pair.f.log_abs_u(x).1 > 0.0 && pair.g.log_abs_u(x).1 > 0.0,
                    "{name}: pair not positive at x = {x}"
                );
            }
        }
        Ok(())
    })());
}

#[test]
fn criterion_07_oracle_cross_check() {
    report(7, "shooting vs finite differences, rel < 1e-3, order >= 1.9", (|| {
        // Criterion-2 problem on its native interval.
        let reg = regular_q1();
        let s = eigenvalues_real(
            &reg,
            &ExtensionSpec::Friedrichs,
            (0.5, 100.0),
            3,
            &RealOpts::default(),
        )
        .map_err(to_str)?;
        let op = discretize(&reg, 1.0, 10_000, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet)
            .map_err(to_str)?;
        let disc = eigenvalues_discrete(&op, 3);
        for (e, d) in s.eigenvalues.iter().zip(&disc) {
            let rel = (e.lambda.re - d).abs() / d;
            ensure!(rel < 1e-3, "regular: {} vs {d}, rel {rel:e}", e.lambda.re);
        }
        // Criterion-1 problem truncated at X = 40 with the matching
        // Robin parameter for l = 1.
        let hl = half_line_q1();
        let basis = kernel_basis(&hl).map_err(to_str)?;
        let spec = lp_family(&hl, &basis, ParamOrInf::Finite(1.0)).map_err(to_str)?;
        let theta = spec.robin_theta().ok_or("missing Robin angle")?;
        let s = eigenvalues_real(&hl, &spec, (-1e-4, 0.9999), 1, &RealOpts::default())
            .map_err(to_str)?;
        let op = discretize(&hl, 40.0, 10_000, DiscreteBc::Robin(theta), DiscreteBc::Dirichlet)
            .map_err(to_str)?;
        let d = eigenvalues_discrete(&op, 1)[0];
        let rel = (s.eigenvalues[0].lambda.re - d).abs() / d.abs();
        ensure!(rel < 1e-3, "half-line: {} vs {d}", s.eigenvalues[0].lambda.re);
        // Convergence order under grid doubling.
        let exact = 1.0 + PI * PI;
        let mut errs = Vec::new();
        for n in [100usize, 200, 400] {
            let op = discretize(&reg, 1.0, n, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet)
                .map_err(to_str)?;
            errs.push((eigenvalues_discrete(&op, 1)[0] - exact).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            ensure!(order >= 1.9, "observed order {order}");
        }
        Ok(())
    })());
}

#[test]
fn criterion_08_sectorial() {
    report(8, "sectorial spectra, sector containment, Krein kernel", (|| {
        // Sector verification first (the coefficient inequality), on
        // the regular problem with q = 1 + 0.5i.
        let reg = problem(0.0, Endpoint::Finite(1.0), "1", "1", "1", Some("0.5"));
        let sector = Sector::new(1.0, 0.5f64.atan()).map_err(to_str)?;
        let h = GaugeFunction::from_expr(expr("1"), &reg.p);
        let rep = sector_check(&reg, &h, sector, 64).map_err(to_str)?;
        ensure!(rep.pointwise_ok, "coefficient inequality fails");
        ensure!(rep.contained, "sampled numerical range leaves the sector");
        // Dirichlet eigenvalues (1 + 0.5i) + n^2 pi^2, n = 1..3.
        let s = eigenvalues_sectorial(
            &reg,
            &ExtensionSpec::Friedrichs,
            (5.0, 95.0),
            (0.0, 1.0),
            3,
            Some(sector),
        )
        .map_err(to_str)?;
        ensure!(s.eigenvalues.len() == 3, "found {}", s.eigenvalues.len());
        for (i, e) in s.eigenvalues.iter().enumerate() {
            let n = (i + 1) as f64;
            let expect = Cx::new(1.0 + n * n * PI * PI, 0.5);
            ensure!(
                (e.lambda - expect).norm() < 1e-6,
                "n = {n}: {} vs {expect}",
                e.lambda
            );
            ensure!(e.in_sector == Some(true), "n = {n} flagged outside sector");
        }
        // Sectorial Krein condition admits psi with lambda = 0.
        let hl = problem(0.0, Endpoint::Infinite, "1", "1", "1", Some("0.5"));
        let basis = kernel_basis(&hl).map_err(to_str)?;
        let spec = sectorial_krein(&hl, &basis).map_err(to_str)?;
        let s = eigenvalues_sectorial(&hl, &spec, (-0.3, 0.3), (-0.3, 0.3), 1, None)
            .map_err(to_str)?;
        ensure!(s.eigenvalues.len() == 1, "found {}", s.eigenvalues.len());
        let e = &s.eigenvalues[0];
        ensure!(
            e.lambda.norm() < 1e-8 && e.residual < 1e-8,
            "lambda {} residual {:e}",
            e.lambda,
            e.residual
        );
        Ok(())
    })());
}

#[test]
fn criterion_09_form_consistency() {
    report(9, "gauge independence and Rayleigh consistency", (|| {
        // t_F across the trivial, principal and non-principal gauges.
        let prob = regular_q1();
        let u = TrialFunction::from_expr(&prob, expr("sin(3.14159265358979323846*x)"))
            .map_err(to_str)?;
        let pair = principal_pair(&prob).map_err(to_str)?;
        let gauges = [
            GaugeFunction::from_expr(expr("1"), &prob.p),
            GaugeFunction::from_solution(pair.f.clone(), 0.0),
            GaugeFunction::from_solution(pair.g.clone(), 0.0),
        ];
        let mut vals = Vec::new();
        for g in &gauges {
            let (t, _) = friedrichs_form(&prob, g, &u, &u).map_err(to_str)?;
            vals.push(t);
        }
        for v in &vals[1..] {
            let rel = (v - vals[0]).norm() / vals[0].norm();
            ensure!(rel < 1e-6, "gauge disagreement rel {rel:e}: {vals:?}");
        }
        // Rayleigh quotient of each computed eigenfunction.
        let spec = ExtensionSpec::Friedrichs;
        let s = eigenvalues_real(&prob, &spec, (0.5, 100.0), 3, &RealOpts::default())
            .map_err(to_str)?;
        for e in &s.eigenvalues {
            let (sol, _) = eigenfunction(&prob, &spec, e.lambda.re).map_err(to_str)?;
            let trial = TrialFunction::from_solution(&prob, sol);
            let ray = rayleigh_check(&prob, &spec, &trial).map_err(to_str)?;
            let rel = (ray.re - e.lambda.re).abs() / e.lambda.re;
            ensure!(rel < 1e-5, "n = {}: Rayleigh rel err {rel:e}", e.n);
        }
        Ok(())
    })());
}

#[test]
fn criterion_10_kalf_criterion() {
    report(10, "Kalf lower bound mu = 3/4 below the Friedrichs bottom", (|| {
        let prob = half_line_q1();
        let h = GaugeFunction::from_expr(expr("exp(-x/2)"), &prob.p);
        let rep = kalf_check(&prob, &h, 0.75, 0.0, 64).map_err(to_str)?;
        ensure!(rep.coercive, "criterion does not certify coercivity");
        ensure!(
            rep.min_margin > -1e-9,
            "inequality margin {:e}",
            rep.min_margin
        );
        // Friedrichs bottom of the spectrum is the essential floor 1.
        match eigenvalues_real(
            &prob,
            &ExtensionSpec::Friedrichs,
            (-1e-4, 0.9999),
            1,
            &RealOpts::default(),
        ) {
            Err(SpectralError::WindowExhausted { spectrum, .. }) => {
                ensure!(
                    spectrum.eigenvalues.is_empty(),
                    "unexpected eigenvalue below the floor"
                );
                let floor = spectrum.essential_floor.ok_or("missing floor estimate")?;
                ensure!((floor - 1.0).abs() < 1e-9, "floor {floor}");
                ensure!(floor >= 0.75, "floor {floor} below mu");
            }
            other => return Err(format!("expected exhaustion, got {other:?}")),
        }
        Ok(())
    })());
}
