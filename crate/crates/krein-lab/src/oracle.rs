//! Independent finite-difference oracle for regular (or truncated)
//! problems: a symmetric three-point discretization of
//! -(pu')' + q u = lambda k u with Robin/Dirichlet end conditions,
//! solved by Sturm-sequence bisection. Kept deliberately simple so it
//! can be trusted as a cross-check for the shooting solvers.

use thiserror::Error;

use crate::expr::ExprError;
use crate::problem::SLProblem;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid discretization: {0}")]
    Validation(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Boundary condition at one end of the discretized interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscreteBc {
    Dirichlet,
    /// (pu')(end) = theta * u(end), with the sign convention of the
    /// continuous Robin families (theta at a; at X the same relation).
    Robin(f64),
}

/// Symmetric tridiagonal pencil (K, M) from the three-point scheme,
/// kept in generalized form: K u = lambda M u with diagonal mass M.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    /// Grid nodes carrying unknowns (Dirichlet nodes eliminated).
    pub x: Vec<f64>,
    /// Stiffness diagonal.
    pub diag: Vec<f64>,
    /// Stiffness off-diagonal (len = diag.len() - 1).
    pub off: Vec<f64>,
    /// Mass diagonal (positive).
    pub mass: Vec<f64>,
}

impl DiscreteOperator {
    /// Symmetric reduction M^{-1/2} K M^{-1/2}: (alpha, beta).
    fn reduced(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.diag.len();
        let alpha: Vec<f64> = (0..n).map(|i| self.diag[i] / self.mass[i]).collect();
        let beta: Vec<f64> = (0..n - 1)
            .map(|i| self.off[i] / (self.mass[i] * self.mass[i + 1]).sqrt())
            .collect();
        (alpha, beta)
    }
}

/// Three-point finite-difference discretization of `prob` on [a, X]
/// with `n` uniform subintervals: harmonic averaging of p at the cell
/// midpoints, Robin conditions folded into half-cell boundary rows.
pub fn discretize(
    prob: &SLProblem,
    x_end: f64,
    n: usize,
    bc_a: DiscreteBc,
    bc_x: DiscreteBc,
) -> Result<DiscreteOperator, OracleError> {
    if n < 2 {
        return Err(OracleError::Validation("need at least 2 subintervals".into()));
    }
    if !(x_end > prob.a) {
        return Err(OracleError::Validation("empty interval".into()));
    }
    if prob.q2.is_some() {
        return Err(OracleError::Validation(
            "oracle handles real coefficients only".into(),
        ));
    }
    let h = (x_end - prob.a) / n as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| prob.a + i as f64 * h).collect();
    let mut p = Vec::with_capacity(n + 1);
    let mut q = Vec::with_capacity(n + 1);
    let mut k = Vec::with_capacity(n + 1);
    for &x in &nodes {
        let (pv, qv, kv) = (prob.p_at(x)?, prob.q1_at(x)?, prob.k_at(x)?);
        if !(pv.is_finite() && qv.is_finite() && kv.is_finite()) || pv <= 0.0 || kv <= 0.0 {
            return Err(OracleError::Validation(format!(
                "coefficient singular or sign-degenerate at x = {x}"
            )));
        }
        p.push(pv);
        q.push(qv);
        k.push(kv);
    }
    // Harmonic mean of p over each cell, used at the cell midpoint.
    let pm: Vec<f64> = (0..n)
        .map(|i| 2.0 / (1.0 / p[i] + 1.0 / p[i + 1]))
        .collect();

    let mut x = Vec::new();
    let mut diag = Vec::new();
    let mut off = Vec::new();
    let mut mass = Vec::new();

    if let DiscreteBc::Robin(theta) = bc_a {
        // Half control volume at the left end; the boundary flux
        // (pu')(a) = theta u(a) enters the row directly.
        x.push(nodes[0]);
        diag.push(pm[0] / h + theta + 0.5 * q[0] * h);
        mass.push(0.5 * k[0] * h);
    }
    for i in 1..n {
        if !x.is_empty() {
            off.push(-pm[i - 1] / h);
        }
        x.push(nodes[i]);
        diag.push((pm[i - 1] + pm[i]) / h + q[i] * h);
        mass.push(k[i] * h);
    }
    if let DiscreteBc::Robin(theta) = bc_x {
        off.push(-pm[n - 1] / h);
        x.push(nodes[n]);
        diag.push(pm[n - 1] / h - theta + 0.5 * q[n] * h);
        mass.push(0.5 * k[n] * h);
    }
    Ok(DiscreteOperator { x, diag, off, mass })
}

/// Number of eigenvalues of the reduced matrix strictly below `lambda`
/// (Sturm sequence: signs of the LDL^T pivots).
fn count_below(alpha: &[f64], beta: &[f64], lambda: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0f64;
    for i in 0..alpha.len() {
        let b2 = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        d = (alpha[i] - lambda) - b2 / d;
        if d == 0.0 {
            d = 1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest `count` generalized eigenvalues of (stiffness, mass) by
/// bisection on the Sturm count.
pub fn eigenvalues_discrete(op: &DiscreteOperator, count: usize) -> Vec<f64> {
    let (alpha, beta) = op.reduced();
    let n = alpha.len();
    let count = count.min(n);
    // Gershgorin bounds for the reduced matrix.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = (if i > 0 { beta[i - 1].abs() } else { 0.0 })
            + (if i + 1 < n { beta[i].abs() } else { 0.0 });
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    let mut out = Vec::with_capacity(count);
    for j in 1..=count {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if count_below(&alpha, &beta, mid) >= j {
                b = mid;
            } else {
                a = mid;
            }
            if (b - a).abs() <= 1e-13 * (1.0 + b.abs()) {
                break;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Discrete Rayleigh quotient v^T K v / v^T M v of a trial vector.
pub fn rayleigh_discrete(op: &DiscreteOperator, v: &[f64]) -> f64 {
    let n = op.diag.len();
    assert_eq!(v.len(), n, "trial vector length mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += op.diag[i] * v[i] * v[i];
        if i + 1 < n {
            num += 2.0 * op.off[i] * v[i] * v[i + 1];
        }
        den += op.mass[i] * v[i] * v[i];
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::extensions::{kernel_basis, lp_family, ParamOrInf};
    use crate::problem::Endpoint;
    use crate::spectral::eigenvalues_real;
    use std::f64::consts::PI;

    fn unit_problem(m: Endpoint) -> SLProblem {
        SLProblem::new(
            0.0,
            m,
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            None,
        )
    }

    #[test]
    fn dirichlet_stencil_pattern() {
        // p=k=1, q=0 on [0,1]: classic (2,-1)/h^2 rows after the mass
        // normalization.
        let prob = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("0").unwrap(),
            None,
        );
        let n = 4;
        let h = 0.25;
        let op = discretize(&prob, 1.0, n, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet).unwrap();
        assert_eq!(op.diag.len(), n - 1);
        let (alpha, beta) = op.reduced();
        for a in alpha {
            assert!((a - 2.0 / (h * h)).abs() < 1e-12);
        }
        for b in beta {
            assert!((b + 1.0 / (h * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_closed_form() {
        let prob = unit_problem(Endpoint::Finite(1.0));
        let op = discretize(&prob, 1.0, 10_000, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet)
            .unwrap();
        let eig = eigenvalues_discrete(&op, 5);
        for (i, lam) in eig.iter().enumerate() {
            let n = (i + 1) as f64;
            let expect = 1.0 + n * n * PI * PI;
            assert!(
                (lam - expect).abs() / expect < 1e-3,
                "n = {n}: {lam} vs {expect}"
            );
        }
    }

    #[test]
    fn neumann_boundary_row() {
        // u'(0) = 0, u(1) = 0 with q = 1: lambda_n = 1 + ((n-1/2)pi)^2.
        let prob = unit_problem(Endpoint::Finite(1.0));
        let op = discretize(&prob, 1.0, 4000, DiscreteBc::Robin(0.0), DiscreteBc::Dirichlet)
            .unwrap();
        let eig = eigenvalues_discrete(&op, 3);
        for (i, lam) in eig.iter().enumerate() {
            let n = (i + 1) as f64;
            let expect = 1.0 + (n - 0.5) * (n - 0.5) * PI * PI;
            assert!(
                (lam - expect).abs() / expect < 1e-3,
                "n = {n}: {lam} vs {expect}"
            );
        }
    }

    #[test]
    fn truncated_robin_family_value() {
        // theta = -1/2 is the l = 1 member of the half-line family:
        // lambda_1 = 1 - (1 - 1/2)^2 = 3/4; truncation error at X = 40
        // is exponentially small.
        let prob = unit_problem(Endpoint::Infinite);
        let op = discretize(&prob, 40.0, 10_000, DiscreteBc::Robin(-0.5), DiscreteBc::Dirichlet)
            .unwrap();
        let eig = eigenvalues_discrete(&op, 1);
        assert!(
            (eig[0] - 0.75).abs() / 0.75 < 1e-3,
            "lambda_1 = {}",
            eig[0]
        );
    }

    #[test]
    fn convergence_order_under_doubling() {
        let prob = unit_problem(Endpoint::Finite(1.0));
        let exact = 1.0 + PI * PI;
        let mut errs = Vec::new();
        for n in [100usize, 200, 400] {
            let op =
                discretize(&prob, 1.0, n, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet).unwrap();
            let lam = eigenvalues_discrete(&op, 1)[0];
            errs.push((lam - exact).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order}");
        }
    }

    #[test]
    fn agreement_with_shooting() {
        // Regular Dirichlet problem: shooting vs discrete, rel < 1e-3.
        let prob = unit_problem(Endpoint::Finite(1.0));
        let s = eigenvalues_real(
            &prob,
            &crate::extensions::ExtensionSpec::Friedrichs,
            (0.5, 100.0),
            3,
            &crate::spectral::RealOpts::default(),
        )
        .unwrap();
        let op = discretize(&prob, 1.0, 10_000, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet)
            .unwrap();
        let eig = eigenvalues_discrete(&op, 3);
        for (e, d) in s.eigenvalues.iter().zip(&eig) {
            let lam = e.lambda.re;
            assert!((lam - d).abs() / d < 1e-3, "{lam} vs {d}");
        }

        // Half-line family member l = 1 against the truncated Robin
        // discretization with the matching boundary parameter.
        let hl = unit_problem(Endpoint::Infinite);
        let basis = kernel_basis(&hl).unwrap();
        let spec = lp_family(&hl, &basis, ParamOrInf::Finite(1.0)).unwrap();
        let s = eigenvalues_real(
            &hl,
            &spec,
            (-0.5, 0.999),
            1,
            &crate::spectral::RealOpts::default(),
        )
        .unwrap();
        let theta = match &spec {
            crate::extensions::ExtensionSpec::RobinLp(d) => d.theta,
            _ => unreachable!(),
        };
        let op = discretize(&hl, 40.0, 10_000, DiscreteBc::Robin(theta), DiscreteBc::Dirichlet)
            .unwrap();
        let eig = eigenvalues_discrete(&op, 1);
        assert!(
            (s.eigenvalues[0].lambda.re - eig[0]).abs() / eig[0].abs() < 1e-3,
            "{} vs {}",
            s.eigenvalues[0].lambda.re,
            eig[0]
        );
    }

    #[test]
    fn discrete_rayleigh_min_max() {
        let prob = unit_problem(Endpoint::Finite(1.0));
        let op = discretize(&prob, 1.0, 500, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet)
            .unwrap();
        let lam1 = eigenvalues_discrete(&op, 1)[0];
        // Hat-like and quadratic trial vectors both sit above the
        // discrete ground state.
        for pow in [1.0f64, 2.0, 0.5] {
            let v: Vec<f64> = op
                .x
                .iter()
                .map(|&x| (x.powf(pow)) * (1.0 - x))
                .collect();
            let r = rayleigh_discrete(&op, &v);
            assert!(r >= lam1 - 1e-9, "pow {pow}: {r} < {lam1}");
        }
    }

    #[test]
    fn validation_errors() {
        let prob = unit_problem(Endpoint::Finite(1.0));
        assert!(matches!(
            discretize(&prob, 1.0, 1, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet),
            Err(OracleError::Validation(_))
        ));
        // 1/x blows up at the left endpoint.
        let sing = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1/x").unwrap(),
            None,
        );
        assert!(discretize(&sing, 1.0, 8, DiscreteBc::Dirichlet, DiscreteBc::Dirichlet).is_err());
    }
}
