//! Quadratic forms: the Friedrichs form in an arbitrary gauge, the
//! extension forms t_B = t_F + b, Rayleigh quotients, sector
//! containment checks, and the divergence-form factorization residual.

use num_complex::Complex64;
use thiserror::Error;

use crate::classify::{ClassifyError, GaugeFunction};
use crate::expr::{ExprError, Expression};
use crate::extensions::{ExtError, ExtensionSpec};
use crate::ode::LinComb;
use crate::problem::{improper_integral, tail_integral, Endpoint, ProblemError, SLProblem, Verdict};

pub type Cx = Complex64;

#[derive(Debug, Error)]
pub enum FormsError {
    #[error("form quadrature did not converge: {0}")]
    NonConvergent(String),
    #[error("trial function is not decomposable: {0}")]
    DecompositionError(String),
    #[error("sector inequality violated at {} sample(s), first witness x = {:.6}", witnesses.len(), witnesses[0].0)]
    InequalityViolation { witnesses: Vec<(f64, f64, f64)> },
    #[error("operation requires a symbolic gauge")]
    NotSymbolic,
    #[error("unsupported case: {0}")]
    UnsupportedCase(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Ext(#[from] ExtError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone)]
enum TrialValue {
    Expr { u: Expression, du: Expression },
    Sampled(LinComb<f64>),
}

/// A trial function for form evaluation, with its membership tags
/// verified on construction.
#[derive(Debug, Clone)]
pub struct TrialFunction {
    value: TrialValue,
    pub vanishes_at_a: bool,
    pub finite_energy: bool,
}

impl TrialFunction {
    pub fn from_expr(prob: &SLProblem, u: Expression) -> Result<TrialFunction, FormsError> {
        let du = u.differentiate();
        let vanishes_at_a = u.evaluate(prob.a)?.abs() < 1e-12;
        // Energy in the trivial gauge, with |q| as a conservative bound.
        let energy = improper_integral(
            prob,
            |x| {
                let d = du.evaluate(x)?;
                let v = u.evaluate(x)?;
                Ok(prob.p_at(x)? * d * d + prob.q1_at(x)?.abs() * v * v)
            },
            prob.a,
        )?;
        let finite_energy = matches!(energy, Verdict::Converges { .. });
        Ok(TrialFunction {
            value: TrialValue::Expr { u, du },
            vanishes_at_a,
            finite_energy,
        })
    }

    /// Wrap a solution-type object (eigenfunction, kernel element).
    pub fn from_solution(prob: &SLProblem, sol: LinComb<f64>) -> TrialFunction {
        let vanishes_at_a = sol.u(prob.a).abs() < 1e-12;
        TrialFunction {
            value: TrialValue::Sampled(sol),
            vanishes_at_a,
            finite_energy: true,
        }
    }

    pub fn u_at(&self, x: f64) -> Result<f64, FormsError> {
        match &self.value {
            TrialValue::Expr { u, .. } => Ok(u.evaluate(x)?),
            TrialValue::Sampled(l) => Ok(l.u(x)),
        }
    }

    pub fn du_at(&self, prob: &SLProblem, x: f64) -> Result<f64, FormsError> {
        match &self.value {
            TrialValue::Expr { du, .. } => Ok(du.evaluate(x)?),
            TrialValue::Sampled(l) => {
                let (_, pu) = l.value(x);
                Ok(pu / prob.p_at(x)?)
            }
        }
    }
}

/// The sector Theta(alpha, nu): Re z >= nu, |Im z| <= tan(alpha)(Re z - nu).
#[derive(Debug, Clone, Copy)]
pub struct Sector {
    pub nu: f64,
    pub alpha: f64,
}

impl Sector {
    pub fn new(nu: f64, alpha: f64) -> Result<Sector, FormsError> {
        if !(nu > 0.0) {
            return Err(FormsError::UnsupportedCase("nu must be positive".into()));
        }
        if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2) {
            return Err(FormsError::UnsupportedCase(
                "alpha must lie in (0, pi/2)".into(),
            ));
        }
        Ok(Sector { nu, alpha })
    }

    pub fn contains(&self, z: Cx, tol: f64) -> bool {
        z.re >= self.nu - tol && z.im.abs() <= self.alpha.tan() * (z.re - self.nu) + tol
    }
}

fn gauge_h_prime(prob: &SLProblem, h: &GaugeFunction, x: f64) -> Result<f64, FormsError> {
    match h {
        GaugeFunction::Expr { ph_prime, .. } => Ok(ph_prime.evaluate(x)? / prob.p_at(x)?),
        GaugeFunction::Solution { sol, .. } => {
            let (_, pu) = sol.value(x);
            Ok(pu / prob.p_at(x)?)
        }
    }
}

/// q_h including the imaginary part in sectorial mode.
fn q_h_cx(prob: &SLProblem, h: &GaugeFunction, x: f64) -> Result<Cx, FormsError> {
    let re = h.q_h_at(prob, x)?;
    let im = match &prob.q2 {
        Some(q2) => q2.evaluate(x)?,
        None => 0.0,
    };
    Ok(Cx::new(re, im))
}

/// The Friedrichs form in the h-gauge:
/// t_F[u, v] = int { p h^2 (u/h)' conj((v/h)') + q_h u conj(v) } dx.
pub fn friedrichs_form(
    prob: &SLProblem,
    h: &GaugeFunction,
    u: &TrialFunction,
    v: &TrialFunction,
) -> Result<(Cx, f64), FormsError> {
    if !u.vanishes_at_a || !v.vanishes_at_a {
        return Err(FormsError::DecompositionError(
            "friedrichs_form requires u(a) = v(a) = 0".into(),
        ));
    }
    if !u.finite_energy || !v.finite_energy {
        return Err(FormsError::DecompositionError(
            "friedrichs_form requires finite-energy trials".into(),
        ));
    }
    let (value, err) = tail_integral::<Cx, _>(
        prob,
        |x| {
            let hx = h.h_at(x)?;
            let hp = gauge_h_prime(prob, h, x).map_err(forms_as_expr)?;
            let p = prob.p_at(x)?;
            let uu = u.u_at(x).map_err(forms_as_expr)?;
            let du = u.du_at(prob, x).map_err(forms_as_expr)?;
            let vv = v.u_at(x).map_err(forms_as_expr)?;
            let dv = v.du_at(prob, x).map_err(forms_as_expr)?;
            // p h^2 (u/h)'(v/h)' = p (u'h - u h')(v'h - v h')/h^2.
            let grad = p * (du * hx - uu * hp) * (dv * hx - vv * hp) / (hx * hx);
            let qh = q_h_cx(prob, h, x).map_err(forms_as_expr)?;
            Ok(Cx::new(grad, 0.0) + qh * uu * vv)
        },
        prob.a,
    )
    .map_err(|e| FormsError::NonConvergent(e.to_string()))?;
    Ok((value, err))
}

// tail_integral closures report ExprError; squeeze richer errors into
// an evaluation failure at the offending point.
fn forms_as_expr(e: FormsError) -> ExprError {
    match e {
        FormsError::Expr(inner) => inner,
        other => ExprError::Domain {
            x: f64::NAN,
            what: other.to_string(),
        },
    }
}

fn trial_at_a(prob: &SLProblem, v: &TrialFunction) -> Result<f64, FormsError> {
    v.u_at(prob.a)
}

/// The extension form t_B[v, w] = t_F[u_v, u_w] + b-term, with the
/// decomposition u = v - v(a) psi.
pub fn extension_form(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    v: &TrialFunction,
    w: &TrialFunction,
) -> Result<Cx, FormsError> {
    let va = trial_at_a(prob, v)?;
    let wa = trial_at_a(prob, w)?;
    // Kernel element used for the decomposition, as a complex-valued
    // closure (real psi embeds trivially).
    enum Psi<'a> {
        None,
        Real(&'a LinComb<f64>),
        Complex(&'a LinComb<Cx>),
    }
    let psi = match spec {
        ExtensionSpec::Friedrichs => {
            if va.abs() > 1e-10 || wa.abs() > 1e-10 {
                return Err(FormsError::DecompositionError(
                    "Friedrichs trials must vanish at a".into(),
                ));
            }
            Psi::None
        }
        ExtensionSpec::RobinLp(d) | ExtensionSpec::Krein(d) => Psi::Real(&d.psi),
        ExtensionSpec::BracketScalar(d) => Psi::Real(&d.psi),
        ExtensionSpec::BracketMatrix(_) => Psi::None, // handled below
        ExtensionSpec::SectorialKrein(d) => Psi::Complex(&d.psi),
        ExtensionSpec::SectorialArlinskii(d) => Psi::Complex(&d.psi),
    };
    if let ExtensionSpec::BracketMatrix(_) = spec {
        return Err(FormsError::UnsupportedCase(
            "matrix-family forms need the kernel coefficients of a solution; use the spectral residuals instead".into(),
        ));
    }
    let decomposed = |t: &TrialFunction, ta: f64, x: f64| -> Result<(Cx, Cx), FormsError> {
        let u = Cx::new(t.u_at(x)?, 0.0);
        let du = Cx::new(t.du_at(prob, x)?, 0.0);
        match &psi {
            Psi::None => Ok((u, du)),
            Psi::Real(l) => {
                let (pu_, ppu) = l.value(x);
                let dpsi = ppu / prob.p_at(x)?;
                Ok((u - Cx::new(ta * pu_, 0.0), du - Cx::new(ta * dpsi, 0.0)))
            }
            Psi::Complex(l) => {
                let (pu_, ppu) = l.value(x);
                let dpsi = ppu / prob.p_at(x)?;
                Ok((u - pu_ * ta, du - dpsi * ta))
            }
        }
    };
    // t_F on the decomposed parts, trivial gauge.
    let (tf, _err) = tail_integral::<Cx, _>(
        prob,
        |x| {
            let (uv, duv) = decomposed(v, va, x).map_err(forms_as_expr)?;
            let (uw, duw) = decomposed(w, wa, x).map_err(forms_as_expr)?;
            let p = prob.p_at(x)?;
            let q1 = prob.q1_at(x)?;
            let q2 = match &prob.q2 {
                Some(e) => e.evaluate(x)?,
                None => 0.0,
            };
            Ok(duv * duw.conj() * p + Cx::new(q1, q2) * uv * uw.conj())
        },
        prob.a,
    )
    .map_err(|e| FormsError::DecompositionError(format!("t_F[u] did not converge: {e}")))?;
    let b_term = match spec {
        ExtensionSpec::Friedrichs => Cx::new(0.0, 0.0),
        ExtensionSpec::Krein(_) | ExtensionSpec::SectorialKrein(_) => Cx::new(0.0, 0.0),
        ExtensionSpec::RobinLp(d) => match d.l {
            crate::extensions::ParamOrInf::Finite(l) => Cx::new(l * va * wa * d.norm_sq, 0.0),
            crate::extensions::ParamOrInf::Infinite => Cx::new(0.0, 0.0),
        },
        ExtensionSpec::BracketScalar(d) => Cx::new(d.beta * va * wa * d.norm_sq, 0.0),
        ExtensionSpec::SectorialArlinskii(d) => d.w * va * wa,
        ExtensionSpec::BracketMatrix(_) => unreachable!(),
    };
    Ok(tf + b_term)
}

/// Rayleigh quotient t_B[v, v] / ||v||^2.
pub fn rayleigh_check(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    v: &TrialFunction,
) -> Result<Cx, FormsError> {
    let t = extension_form(prob, spec, v, v)?;
    let norm = improper_integral(
        prob,
        |x| {
            let u = v.u_at(x).map_err(forms_as_expr)?;
            Ok(prob.k_at(x)? * u * u)
        },
        prob.a,
    )?;
    match norm {
        Verdict::Converges { value, .. } if value > 0.0 => Ok(t / value),
        _ => Err(FormsError::NonConvergent(
            "weighted norm of the trial is not finite and positive".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct SectorReport {
    pub sector: Sector,
    pub pointwise_ok: bool,
    /// Worst margin of q_{1,h} - nu k over the grid.
    pub min_margin: f64,
    /// Sampled numerical-range points (Rayleigh quotients of the trial
    /// family) and whether all lie in the sector.
    pub samples: Vec<Cx>,
    pub contained: bool,
}

/// Deterministic bump-like trial family (x-a)^j (X-x)^2, j = 1..=count;
/// on an infinite interval the polynomial cap is replaced by the
/// exponential e^{-(x-a)} so the trials keep finite energy.
pub fn trial_family(prob: &SLProblem, count: usize) -> Result<Vec<TrialFunction>, FormsError> {
    let big_x = prob.truncation.last();
    let xv = Expression::var();
    let shift = xv.sub(&Expression::number(prob.a));
    let cap2 = match prob.m {
        Endpoint::Finite(_) => {
            let cap = Expression::number(big_x).sub(&xv);
            cap.mul(&cap)
        }
        Endpoint::Infinite => Expression::parse(&format!("exp(-(x - {}))", prob.a))
            .expect("static expression"),
    };
    let mut fam = Vec::with_capacity(count);
    let mut poly = shift.clone();
    for _ in 0..count {
        fam.push(TrialFunction::from_expr(prob, poly.mul(&cap2))?);
        poly = poly.mul(&shift);
    }
    Ok(fam)
}

/// Verify Eq.-(4.1)-style sectoriality pointwise on a grid, then sample
/// the numerical range with the polynomial trial family and assert
/// containment in Theta(alpha, nu).
pub fn sector_check(
    prob: &SLProblem,
    h: &GaugeFunction,
    sector: Sector,
    grid: usize,
) -> Result<SectorReport, FormsError> {
    let tan_a = sector.alpha.tan();
    let mut witnesses = Vec::new();
    let mut min_margin = f64::INFINITY;
    for x in prob.sample_grid(grid) {
        let q1h = h.q_h_at(prob, x)?;
        let k = prob.k_at(x)?;
        let q2 = match &prob.q2 {
            Some(e) => e.evaluate(x)?,
            None => 0.0,
        };
        let margin = q1h - sector.nu * k;
        min_margin = min_margin.min(margin);
        let tol = 1e-9 * (1.0 + q1h.abs());
        if margin < -tol {
            witnesses.push((x, q1h, sector.nu * k));
        }
        if q2.abs() > tan_a * q1h + tol {
            witnesses.push((x, q2.abs(), tan_a * q1h));
        }
    }
    if !witnesses.is_empty() {
        return Err(FormsError::InequalityViolation { witnesses });
    }
    // Sampled numerical range: Rayleigh quotients of the trial family
    // and of pairwise mixtures (containment certificate only).
    let fam = trial_family(prob, 4)?;
    let mut samples = Vec::new();
    let mut contained = true;
    let mut probe = |t: &TrialFunction| -> Result<(), FormsError> {
        let (tf, _) = friedrichs_form(prob, h, t, t)?;
        let norm = match improper_integral(
            prob,
            |x| {
                let u = t.u_at(x).map_err(forms_as_expr)?;
                Ok(prob.k_at(x)? * u * u)
            },
            prob.a,
        )? {
            Verdict::Converges { value, .. } => value,
            other => return Err(FormsError::NonConvergent(format!("{other:?}"))),
        };
        let r = tf / norm;
        if !sector.contains(r, 1e-6 * (1.0 + r.norm())) {
            contained = false;
        }
        samples.push(r);
        Ok(())
    };
    for t in &fam {
        probe(t)?;
    }
    for i in 0..fam.len() {
        for j in (i + 1)..fam.len() {
            let mixed = match (&fam[i].value, &fam[j].value) {
                (TrialValue::Expr { u: a, .. }, TrialValue::Expr { u: b, .. }) => {
                    TrialFunction::from_expr(prob, a.add(b))?
                }
                _ => continue,
            };
            probe(&mixed)?;
        }
    }
    Ok(SectorReport {
        sector,
        pointwise_ok: true,
        min_margin,
        samples,
        contained,
    })
}

/// Residual of the divergence-form factorization: max over samples of
/// |conj(q_h) u - (1/h)[p h^2 (u/h)']' - k tau+ u|, all pieces symbolic.
/// (k tau+ u is the k-multiplied formal expression -(pu')' + conj(q) u.)
pub fn divergence_residual(
    prob: &SLProblem,
    h: &GaugeFunction,
    u: &Expression,
    sample_xs: &[f64],
) -> Result<f64, FormsError> {
    let h_e = match h.expression() {
        Some(e) => e.clone(),
        None => return Err(FormsError::NotSymbolic),
    };
    let p = prob.p.clone();
    let hd = h_e.differentiate();
    let ud = u.differentiate();
    // p h^2 (u/h)' = p (u' h - u h').
    let flux = p.mul(&ud.mul(&h_e).sub(&u.mul(&hd)));
    let dflux = flux.differentiate();
    let pud = p.mul(&ud);
    let dpud = pud.differentiate();
    let ph_prime = p.mul(&hd);
    let phh = ph_prime.differentiate();
    let mut worst: f64 = 0.0;
    for &x in sample_xs {
        let hx = h_e.evaluate(x)?;
        let q1 = prob.q1_at(x)?;
        let q2 = match &prob.q2 {
            Some(e) => e.evaluate(x)?,
            None => 0.0,
        };
        let ux = u.evaluate(x)?;
        let qh_conj = Cx::new(q1 - phh.evaluate(x)? / hx, -q2);
        let lhs = qh_conj * ux - Cx::new(dflux.evaluate(x)? / hx, 0.0);
        let rhs = Cx::new(-dpud.evaluate(x)?, 0.0) + Cx::new(q1, -q2) * ux;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extensions::{kernel_basis, lp_family, KernelBasis, ParamOrInf};
    use crate::problem::Endpoint;

    const PI: f64 = std::f64::consts::PI;

    fn regular_q1() -> SLProblem {
        SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            None,
        )
    }

    fn half_line_q1() -> SLProblem {
        SLProblem::new(
            0.0,
            Endpoint::Infinite,
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            None,
        )
    }

    fn sin_pi_x(prob: &SLProblem) -> TrialFunction {
        TrialFunction::from_expr(
            prob,
            Expression::parse("sin(3.14159265358979312 * x)").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn friedrichs_form_sin_example() {
        let prob = regular_q1();
        let u = sin_pi_x(&prob);
        let h = GaugeFunction::from_expr(Expression::parse("1").unwrap(), &prob.p);
        let (t, _) = friedrichs_form(&prob, &h, &u, &u).unwrap();
        let expect = PI * PI / 2.0 + 0.5;
        assert!((t.re - expect).abs() < 1e-6, "t_F = {t}");
        assert!(t.im.abs() < 1e-12);
    }

    #[test]
    fn friedrichs_form_gauge_independence() {
        let prob = regular_q1();
        let u = sin_pi_x(&prob);
        let h1 = GaugeFunction::from_expr(Expression::parse("1").unwrap(), &prob.p);
        let h2 = GaugeFunction::from_expr(Expression::parse("exp(-x/2)").unwrap(), &prob.p);
        let (t1, _) = friedrichs_form(&prob, &h1, &u, &u).unwrap();
        let (t2, _) = friedrichs_form(&prob, &h2, &u, &u).unwrap();
        assert!((t1 - t2).norm() < 1e-6, "{t1} vs {t2}");
        // Zero trial gives zero.
        let z = TrialFunction::from_expr(&prob, Expression::parse("0").unwrap()).unwrap();
        let (t0, _) = friedrichs_form(&prob, &h1, &z, &z).unwrap();
        assert_eq!(t0, Cx::new(0.0, 0.0));
    }

    #[test]
    fn extension_form_examples() {
        let prob = half_line_q1();
        let basis = kernel_basis(&prob).unwrap();
        let psi = match &basis {
            KernelBasis::SelfAdjoint(k) => k.psi.clone(),
            _ => panic!(),
        };
        let v_psi = TrialFunction::from_solution(&prob, psi);
        // t_l[psi] = l ||psi||^2 (the decomposed part u vanishes).
        for l in [0.5, 1.0, 2.0] {
            let spec = lp_family(&prob, &basis, ParamOrInf::Finite(l)).unwrap();
            let t = extension_form(&prob, &spec, &v_psi, &v_psi).unwrap();
            assert!((t.re - l * 0.5).abs() < 1e-5, "l = {l}: t = {t}");
        }
        // Krein: t_0[psi] = 0.
        let krein = lp_family(&prob, &basis, ParamOrInf::Finite(0.0)).unwrap();
        let t0 = extension_form(&prob, &krein, &v_psi, &v_psi).unwrap();
        assert!(t0.norm() < 1e-5, "t_0[psi] = {t0}");
        // Ordering: t_{l1}[v] <= t_{l2}[v] for a trial with v(a) != 0.
        let v = TrialFunction::from_expr(&prob, Expression::parse("(1 + x) * exp(-x)").unwrap())
            .unwrap();
        let mut prev = -f64::INFINITY;
        for l in [0.0, 0.5, 1.0, 2.0] {
            let spec = lp_family(&prob, &basis, ParamOrInf::Finite(l)).unwrap();
            let t = extension_form(&prob, &spec, &v, &v).unwrap().re;
            assert!(t >= prev - 1e-8, "ordering broken at l = {l}");
            prev = t;
        }
        // Vanishing trial: every spec gives the Friedrichs value.
        let v0 = TrialFunction::from_expr(&prob, Expression::parse("x * exp(-x)").unwrap())
            .unwrap();
        let h = GaugeFunction::from_expr(Expression::parse("1").unwrap(), &prob.p);
        let (tf, _) = friedrichs_form(&prob, &h, &v0, &v0).unwrap();
        for l in [0.0, 1.0] {
            let spec = lp_family(&prob, &basis, ParamOrInf::Finite(l)).unwrap();
            let t = extension_form(&prob, &spec, &v0, &v0).unwrap();
            assert!((t - tf).norm() < 1e-7, "l = {l}: {t} vs {tf}");
        }
    }

    #[test]
    fn rayleigh_examples() {
        let prob = regular_q1();
        let u = sin_pi_x(&prob);
        let r = rayleigh_check(&prob, &ExtensionSpec::Friedrichs, &u).unwrap();
        assert!((r.re - (1.0 + PI * PI)).abs() < 1e-5, "rayleigh = {r}");
        // Krein half-line with v = psi: quotient 0.
        let hl = half_line_q1();
        let basis = kernel_basis(&hl).unwrap();
        let psi = match &basis {
            KernelBasis::SelfAdjoint(k) => k.psi.clone(),
            _ => panic!(),
        };
        let krein = lp_family(&hl, &basis, ParamOrInf::Finite(0.0)).unwrap();
        let v_psi = TrialFunction::from_solution(&hl, psi);
        let r0 = rayleigh_check(&hl, &krein, &v_psi).unwrap();
        assert!(r0.norm() < 1e-5, "krein rayleigh = {r0}");
        assert!(r0.re >= -1e-8);
    }

    #[test]
    fn sector_check_examples() {
        // q = 1 + 0.5i, h = 1: nu = 1, tan(alpha) = 0.5 passes.
        let prob = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Some(Expression::parse("0.5").unwrap()),
        );
        let h = GaugeFunction::from_expr(Expression::parse("1").unwrap(), &prob.p);
        let sector = Sector::new(1.0, 0.5f64.atan()).unwrap();
        let rep = sector_check(&prob, &h, sector, 50).unwrap();
        assert!(rep.pointwise_ok);
        assert!(rep.contained, "samples: {:?}", rep.samples);
        assert!(!rep.samples.is_empty());
        // q2 = 2 with the same alpha fails with witnesses.
        let bad = SLProblem::new(
            0.0,
            Endpoint::Finite(1.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Some(Expression::parse("2").unwrap()),
        );
        match sector_check(&bad, &h, sector, 50) {
            Err(FormsError::InequalityViolation { witnesses }) => assert!(!witnesses.is_empty()),
            other => panic!("expected violation, got {other:?}"),
        }
        // q2 = 0 passes for every alpha.
        let real = regular_q1();
        let rep = sector_check(&real, &h, Sector::new(1.0, 0.1).unwrap(), 50).unwrap();
        assert!(rep.pointwise_ok);
    }

    #[test]
    fn divergence_residual_examples() {
        // u = h, q2 = 0: residual 0 (exactly the Jacobi identity).
        let prob = half_line_q1();
        let h = GaugeFunction::from_expr(Expression::parse("exp(-x/2)").unwrap(), &prob.p);
        let u = Expression::parse("exp(-x/2)").unwrap();
        let r = divergence_residual(&prob, &h, &u, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert!(r < 1e-9, "residual {r}");
        // Complex potential, trivial gauge, u = sin x on [0, 3].
        let cx = SLProblem::new(
            0.0,
            Endpoint::Finite(3.0),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Expression::parse("1").unwrap(),
            Some(Expression::parse("0.5").unwrap()),
        );
        let h1 = GaugeFunction::from_expr(Expression::parse("1").unwrap(), &cx.p);
        let u = Expression::parse("sin(x)").unwrap();
        let r = divergence_residual(&cx, &h1, &u, &[0.3, 1.1, 2.4]).unwrap();
        assert!(r < 1e-9, "residual {r}");
        // Solution gauges are not symbolic.
        let psi = match kernel_basis(&prob).unwrap() {
            KernelBasis::SelfAdjoint(k) => k.psi,
            _ => panic!(),
        };
        let hs = GaugeFunction::from_solution(psi, 0.0);
        assert!(matches!(
            divergence_residual(&prob, &hs, &u, &[1.0]),
            Err(FormsError::NotSymbolic)
        ));
    }

    #[test]
    fn friedrichs_family_limit_behavior() {
        // Trials in the Friedrichs family: u/g -> 0 at the cutoffs and
        // u/f stabilizes, on the regular [0,1] problem.
        let prob = regular_q1();
        let pair = crate::classify::principal_pair(&prob).unwrap();
        let u = Expression::parse("x * (1 - x) * (1 - x)").unwrap();
        let cuts = &prob.truncation.cutoffs;
        let take: Vec<f64> = cuts[cuts.len() - 5..].to_vec();
        let mut over_g: Vec<f64> = Vec::new();
        let mut over_f: Vec<f64> = Vec::new();
        for &c in &take {
            let ux = u.evaluate(c).unwrap();
            over_g.push((ux / pair.g.u(c)).abs());
            over_f.push(ux / pair.f.u(c));
        }
        assert!(
            over_g.last().unwrap() < &(1e-3 * over_g[0].max(1e-30) + 1e-12),
            "u/g not decaying: {over_g:?}"
        );
        let d_last = (over_f[4] - over_f[3]).abs();
        let d_first = (over_f[1] - over_f[0]).abs();
        assert!(
            d_last < 0.3 * d_first + 1e-9,
            "u/f not stabilizing: {over_f:?}"
        );
    }
}
