//! The Sturm-Liouville problem tau(u) = (1/k){-(pu')' + qu} on [a, m),
//! with weighted quadrature up to a singular or infinite right endpoint.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::quad::{self, QuadError, QuadValue};

pub type Cx = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Endpoint {
    Finite(f64),
    Infinite,
}

impl Endpoint {
    pub fn is_finite(self) -> bool {
        matches!(self, Endpoint::Finite(_))
    }
    pub fn value(self) -> Option<f64> {
        match self {
            Endpoint::Finite(v) => Some(v),
            Endpoint::Infinite => None,
        }
    }
}

/// Cutoff sequence used as the numerical stand-in for limits x -> m.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationPolicy {
    /// Strictly increasing, all < m.
    pub cutoffs: Vec<f64>,
    /// Per-cutoff tolerance for tail convergence decisions.
    pub tol: f64,
}

impl TruncationPolicy {
    /// Default: X_{n+1} = m - (m - X_n)/4 for finite m, doubling of
    /// (X_n - a) for m = infinity.
    pub fn default_for(a: f64, m: Endpoint) -> TruncationPolicy {
        match m {
            Endpoint::Finite(mv) => {
                let mut cutoffs = Vec::new();
                let mut x = a + 0.5 * (mv - a);
                for _ in 0..12 {
                    cutoffs.push(x);
                    x = mv - (mv - x) / 4.0;
                }
                TruncationPolicy { cutoffs, tol: 1e-9 }
            }
            Endpoint::Infinite => {
                let mut cutoffs = Vec::new();
                let mut x = a + 5.0;
                for _ in 0..6 {
                    cutoffs.push(x);
                    x = a + 2.0 * (x - a);
                }
                TruncationPolicy { cutoffs, tol: 1e-9 }
            }
        }
    }

    pub fn from_cutoffs(cutoffs: Vec<f64>, tol: f64) -> TruncationPolicy {
        TruncationPolicy { cutoffs, tol }
    }

    pub fn last(&self) -> f64 {
        *self.cutoffs.last().expect("empty truncation policy")
    }
}

#[derive(Debug, Error, Clone)]
pub enum ProblemError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("improper integral did not converge: {0}")]
    NonConvergent(String),
    #[error("divergence test inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone)]
pub struct SLProblem {
    pub a: f64,
    pub m: Endpoint,
    pub k: Expression,
    pub p: Expression,
    pub q1: Expression,
    pub q2: Option<Expression>,
    pub truncation: TruncationPolicy,
}

impl SLProblem {
    pub fn new(
        a: f64,
        m: Endpoint,
        k: Expression,
        p: Expression,
        q1: Expression,
        q2: Option<Expression>,
    ) -> SLProblem {
        let truncation = TruncationPolicy::default_for(a, m);
        SLProblem {
            a,
            m,
            k,
            p,
            q1,
            q2,
            truncation,
        }
    }

    pub fn with_truncation(mut self, t: TruncationPolicy) -> SLProblem {
        self.truncation = t;
        self
    }

    pub fn is_sectorial(&self) -> bool {
        self.q2.as_ref().map(|q| !q.is_const(0.0)).unwrap_or(false)
    }

    pub fn k_at(&self, x: f64) -> Result<f64, ExprError> {
        self.k.evaluate(x)
    }
    pub fn p_at(&self, x: f64) -> Result<f64, ExprError> {
        self.p.evaluate(x)
    }
    pub fn q1_at(&self, x: f64) -> Result<f64, ExprError> {
        self.q1.evaluate(x)
    }
    pub fn q2_at(&self, x: f64) -> Result<f64, ExprError> {
        match &self.q2 {
            Some(q2) => q2.evaluate(x),
            None => Ok(0.0),
        }
    }

    /// Potential as a complex number; `adjoint` conjugates it (tau+).
    pub fn q_cx(&self, x: f64, adjoint: bool) -> Result<Cx, ExprError> {
        let re = self.q1_at(x)?;
        let im = self.q2_at(x)?;
        Ok(Cx::new(re, if adjoint { -im } else { im }))
    }

    /// Sample grid on [a, X_last] avoiding both endpoints.
    pub fn sample_grid(&self, n: usize) -> Vec<f64> {
        let hi = self.truncation.last();
        let lo = self.a;
        (1..=n)
            .map(|i| lo + (hi - lo) * (i as f64) / (n as f64 + 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Confidence {
    High,
    Medium,
}

#[derive(Debug, Clone, Serialize)]
pub enum Verdict {
    Converges { value: f64, tail_error: f64 },
    Diverges { confidence: Confidence },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn converged_value(&self) -> Option<f64> {
        match self {
            Verdict::Converges { value, .. } => Some(*value),
            _ => None,
        }
    }
    pub fn is_divergent(&self) -> bool {
        matches!(self, Verdict::Diverges { .. })
    }
}

/// Growth factor across three cutoffs beyond which partial integrals
/// are declared divergent.
const GROWTH_FACTOR: f64 = 10.0;

/// Decide convergence/divergence of an integral from the sequence of
/// partial integrals over the given shells (in integration order).
pub fn verdict_over_shells<F>(
    mut f: F,
    shells: &[(f64, f64)],
    tol: f64,
) -> Result<Verdict, ProblemError>
where
    F: FnMut(f64) -> Result<f64, ExprError>,
{
    let mut partials: Vec<f64> = Vec::new();
    let mut increments: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut quad_err = 0.0;
    for &(lo, hi) in shells {
        let r = match quad::integrate(&mut f, lo, hi, tol) {
            Ok(r) => r,
            Err(QuadError::NonConvergent { .. }) => {
                return Ok(Verdict::Inconclusive {
                    reason: format!("shell [{lo}, {hi}] quadrature failed to converge"),
                })
            }
            Err(e) => return Err(e.into()),
        };
        if !r.value.is_finite() {
            return Ok(Verdict::Diverges {
                confidence: Confidence::High,
            });
        }
        total += r.value;
        quad_err += r.error;
        partials.push(total);
        increments.push(r.value);
        let n = partials.len();
        if n >= 4 && partials[n - 1].abs() >= GROWTH_FACTOR * partials[n - 4].abs().max(tol) {
            return Ok(Verdict::Diverges {
                confidence: Confidence::High,
            });
        }
        if n >= 3
            && increments[n - 1].abs() <= tol * (1.0 + total.abs())
            && increments[n - 2].abs() <= tol * (1.0 + total.abs())
        {
            return Ok(Verdict::Converges {
                value: total,
                tail_error: increments[n - 1].abs() + quad_err,
            });
        }
    }
    let n = increments.len();
    if n >= 3 {
        let d2 = increments[n - 1].abs();
        let d1 = increments[n - 2].abs();
        let d0 = increments[n - 3].abs();
        // Geometric decay: extrapolate the tail.
        if d1 > 0.0 && d0 > 0.0 {
            let r1 = d2 / d1;
            let r0 = d1 / d0;
            if r1 < 0.9 && r0 < 0.9 {
                let r = r1.max(r0);
                let tail = increments[n - 1] * r / (1.0 - r);
                return Ok(Verdict::Converges {
                    value: total + tail,
                    tail_error: tail.abs() + d2 * r + quad_err,
                });
            }
            if r1 >= 0.9 && r0 >= 0.9 {
                return Ok(Verdict::Diverges {
                    confidence: Confidence::Medium,
                });
            }
        }
    }
    Ok(Verdict::Inconclusive {
        reason: "non-monotone growth pattern within cutoff budget".into(),
    })
}

/// Shells from `from` out to the cutoff sequence (right endpoint m).
pub fn right_shells(prob: &SLProblem, from: f64) -> Vec<(f64, f64)> {
    let mut shells = Vec::new();
    let mut lo = from;
    for &c in &prob.truncation.cutoffs {
        if c > lo {
            shells.push((lo, c));
            lo = c;
        }
    }
    shells
}

/// Shells approaching the left endpoint `a` from `x0`, in integration
/// order (each successive shell is closer to `a`).
pub fn left_shells(a: f64, x0: f64, count: usize) -> Vec<(f64, f64)> {
    let mut shells = Vec::new();
    let mut hi = x0;
    for _ in 0..count {
        let lo = a + (hi - a) / 4.0;
        shells.push((lo, hi));
        hi = lo;
    }
    shells
}

/// Verdict for the improper integral of `f` from `from` up to m.
pub fn improper_integral<F>(
    prob: &SLProblem,
    mut f: F,
    from: f64,
) -> Result<Verdict, ProblemError>
where
    F: FnMut(f64) -> Result<f64, ExprError>,
{
    let shells = right_shells(prob, from);
    if shells.is_empty() {
        return Err(ProblemError::Validation(format!(
            "starting point {from} lies beyond the last cutoff"
        )));
    }
    verdict_over_shells(&mut f, &shells, prob.truncation.tol)
}

/// Weighted L2 norm squared of `u` over [a, m).
pub fn weighted_norm_sq<F>(prob: &SLProblem, mut u: F) -> Result<(f64, f64), ProblemError>
where
    F: FnMut(f64) -> Result<f64, ExprError>,
{
    let k = &prob.k;
    let verdict = improper_integral(prob, |x| Ok(u(x)?.powi(2) * k.evaluate(x)?), prob.a)?;
    match verdict {
        Verdict::Converges { value, tail_error } => Ok((value, tail_error)),
        Verdict::Diverges { .. } => Err(ProblemError::NonConvergent(
            "weighted norm diverges across the cutoff sequence".into(),
        )),
        Verdict::Inconclusive { reason } => Err(ProblemError::NonConvergent(reason)),
    }
}

/// Improper integral of a complex-valued integrand over [from, m),
/// converging case only (used for form values with tail extrapolation).
pub fn tail_integral<V, F>(
    prob: &SLProblem,
    mut f: F,
    from: f64,
) -> Result<(V, f64), ProblemError>
where
    V: QuadValue,
    F: FnMut(f64) -> Result<V, ExprError>,
{
    let shells = right_shells(prob, from);
    let tol = prob.truncation.tol;
    let mut total = V::zero();
    let mut quad_err = 0.0;
    let mut increments: Vec<V> = Vec::new();
    for &(lo, hi) in &shells {
        let r = quad::integrate(&mut f, lo, hi, tol)?;
        total = total.add(r.value);
        quad_err += r.error;
        increments.push(r.value);
        let n = increments.len();
        if n >= 2
            && increments[n - 1].norm() <= tol * (1.0 + total.norm())
            && increments[n - 2].norm() <= tol * (1.0 + total.norm())
        {
            return Ok((total, increments[n - 1].norm() + quad_err));
        }
    }
    let n = increments.len();
    if n >= 3 {
        let d2 = increments[n - 1].norm();
        let d1 = increments[n - 2].norm();
        if d1 > 0.0 {
            let r = d2 / d1;
            if r < 0.9 {
                let tail = increments[n - 1].scale(r / (1.0 - r));
                return Ok((total.add(tail), tail.norm() + quad_err));
            }
        } else if d2 == 0.0 {
            return Ok((total, quad_err));
        }
    }
    Err(ProblemError::NonConvergent(
        "tail of improper integral did not settle within the cutoff budget".into(),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub positivity_violations: Vec<(String, f64)>,
    pub k_integrable_at_a: bool,
    pub inv_p_integrable_at_a: bool,
    pub q_integrable_at_a: bool,
    pub sectorial: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.positivity_violations.is_empty()
            && self.k_integrable_at_a
            && self.inv_p_integrable_at_a
            && self.q_integrable_at_a
    }
}

/// Sampled checks of the coefficient hypotheses: positivity of k and p
/// on a grid, and integrability of k, 1/p, |q| at the (regular) left
/// endpoint and on compacts.
pub fn validate(prob: &SLProblem, grid_points: usize) -> Result<ValidationReport, ProblemError> {
    let mut violations = Vec::new();
    let mut notes = Vec::new();
    for &x in prob.sample_grid(grid_points).iter() {
        match prob.k_at(x) {
            Ok(v) if v > 0.0 => {}
            Ok(_) => violations.push(("k".to_string(), x)),
            Err(e) => notes.push(format!("k({x}) evaluation failed: {e}")),
        }
        match prob.p_at(x) {
            Ok(v) if v > 0.0 => {}
            Ok(_) => violations.push(("p".to_string(), x)),
            Err(e) => notes.push(format!("p({x}) evaluation failed: {e}")),
        }
        if let Err(e) = prob.q1_at(x) {
            notes.push(format!("q1({x}) evaluation failed: {e}"));
        }
    }
    // Regularity of the left endpoint: k, 1/p and |q| integrable at a.
    let x0 = prob.truncation.cutoffs[0].min(prob.a + 1.0);
    let shells = left_shells(prob.a, x0, 10);
    let tol = prob.truncation.tol;
    let k = &prob.k;
    let p = &prob.p;
    let q1 = &prob.q1;
    let check = |f: &mut dyn FnMut(f64) -> Result<f64, ExprError>| -> Result<bool, ProblemError> {
        match verdict_over_shells(f, &shells, tol)? {
            Verdict::Converges { .. } => Ok(true),
            Verdict::Diverges { .. } => Ok(false),
            Verdict::Inconclusive { .. } => Ok(false),
        }
    };
    let k_ok = check(&mut |x| k.evaluate(x))?;
    let p_ok = check(&mut |x| Ok(1.0 / p.evaluate(x)?))?;
    let q_ok = check(&mut |x| Ok(q1.evaluate(x)?.abs()))?;
    let report = ValidationReport {
        positivity_violations: violations,
        k_integrable_at_a: k_ok,
        inv_p_integrable_at_a: p_ok,
        q_integrable_at_a: q_ok,
        sectorial: prob.is_sectorial(),
        notes,
    };
    Ok(report)
}
