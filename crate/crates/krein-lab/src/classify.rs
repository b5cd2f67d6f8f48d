//! Endpoint classification (regular / limit-point / limit-circle),
//! oscillation tests, principal and non-principal solutions near the
//! singular endpoint, the Kalf lower-bound criterion, and the Jacobi
//! factorization identity.

use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::ode::{
    integrate, prufer_integrate, Calibrated, IntOpts, LinComb, OdeError, QuasiState,
};
use crate::problem::{
    improper_integral, right_shells, verdict_over_shells, Confidence, ProblemError, SLProblem,
    Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EndpointKind {
    Regular,
    LimitPoint,
    LimitCircle,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("classification inconclusive: {0}")]
    Inconclusive(String),
    #[error("tau u = {lambda} u is oscillatory near m")]
    Oscillatory { lambda: f64 },
    #[error("pointwise inequality violated at {} sample points (first witness x = {}, margin {})",
            witnesses.len(), witnesses.first().map(|w| w.0).unwrap_or(f64::NAN),
            witnesses.first().map(|w| w.1).unwrap_or(f64::NAN))]
    InequalityViolation { witnesses: Vec<(f64, f64)> },
    #[error("gauge function is not positive at x = {x}")]
    GaugeNotPositive { x: f64 },
    #[error("operation requires a symbolic (expression) gauge")]
    NotSymbolic,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Integrability evidence for one test solution of tau u = lambda0 u.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolutionEvidence {
    /// Initial quasi-derivative data (u(a), (pu')(a)).
    pub initial: (f64, f64),
    /// Verdict for the weighted L2 norm near m.
    pub norm: Verdict,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EndpointReport {
    pub kind: EndpointKind,
    pub lambda0: f64,
    /// Verdicts for the integrals of k, 1/p and |q| up to m.
    pub k_integral: Verdict,
    pub inv_p_integral: Verdict,
    pub q_integral: Verdict,
    pub solution_evidence: Vec<SolutionEvidence>,
    /// Oscillation results per tested lambda.
    pub oscillation: Vec<(f64, bool)>,
    pub confidence: Confidence,
}

impl EndpointReport {
    pub fn oscillatory_at(&self, lambda: f64) -> Option<bool> {
        self.oscillation
            .iter()
            .find(|(l, _)| *l == lambda)
            .map(|(_, o)| *o)
    }
}

/// Grid on [lo, last cutoff] that follows the cutoff geometry, so that
/// it refines toward a finite singular endpoint.
pub fn shell_grid(prob: &SLProblem, lo: f64, per_shell: usize) -> Vec<f64> {
    let mut pts = Vec::new();
    let mut prev = lo;
    for &c in &prob.truncation.cutoffs {
        if c <= prev {
            continue;
        }
        for i in 1..=per_shell {
            pts.push(prev + (c - prev) * i as f64 / per_shell as f64);
        }
        prev = c;
    }
    pts
}

/// Partial weighted norms ln(int_a^{X_i} k u^2) at each cutoff, computed
/// by chaining renormalized integration segments.
fn chained_norm_log_partials(
    prob: &SLProblem,
    lambda0: f64,
    init: QuasiState<f64>,
) -> Result<Vec<f64>, OdeError> {
    let mut state = init;
    let mut aux = [0.0; 2];
    let mut ls = 0.0;
    let mut out = Vec::new();
    for &c in &prob.truncation.cutoffs {
        if c <= state.x {
            continue;
        }
        let opts = IntOpts {
            tol: 1e-9,
            renormalize: true,
            track_norm: true,
            track_inv: false,
            init_aux: aux,
            init_log_scale: ls,
            max_steps: 2_000_000,
        };
        let t = integrate(prob, lambda0, false, state, c, &opts)?;
        let last = t.last();
        aux = last.aux;
        ls = last.log_scale;
        state = QuasiState::new(last.x, last.u, last.pu);
        out.push(if aux[0] > 0.0 {
            aux[0].ln() + 2.0 * ls
        } else {
            f64::NEG_INFINITY
        });
    }
    Ok(out)
}

/// Verdict from a sequence of log partial integrals (nondecreasing
/// true partials), mirroring the shell-quadrature decision rules.
fn verdict_from_log_partials(lps: &[f64], tol: f64) -> Verdict {
    if lps.iter().any(|v| v.is_nan()) {
        return Verdict::Inconclusive {
            reason: "partial norm evaluated to NaN".into(),
        };
    }
    if lps.last().copied().unwrap_or(f64::NEG_INFINITY) > 690.0 {
        return Verdict::Diverges {
            confidence: Confidence::High,
        };
    }
    let ps: Vec<f64> = lps.iter().map(|&l| l.exp()).collect();
    let n = ps.len();
    if n < 3 {
        return Verdict::Inconclusive {
            reason: "fewer than three cutoffs".into(),
        };
    }
    let mut increments = Vec::with_capacity(n);
    increments.push(ps[0]);
    for i in 1..n {
        increments.push((ps[i] - ps[i - 1]).max(0.0));
    }
    for i in 3..n {
        if ps[i] >= 10.0 * ps[i - 3].max(tol) {
            return Verdict::Diverges {
                confidence: Confidence::High,
            };
        }
    }
    let total = ps[n - 1];
    if increments[n - 1] <= tol * (1.0 + total) && increments[n - 2] <= tol * (1.0 + total) {
        return Verdict::Converges {
            value: total,
            tail_error: increments[n - 1],
        };
    }
    let d2 = increments[n - 1];
    let d1 = increments[n - 2];
    let d0 = increments[n - 3];
    if d1 > 0.0 && d0 > 0.0 {
        let r1 = d2 / d1;
        let r0 = d1 / d0;
        if r1 < 0.9 && r0 < 0.9 {
            let r = r1.max(r0);
            let tail = d2 * r / (1.0 - r);
            return Verdict::Converges {
                value: total + tail,
                tail_error: tail + d2 * r,
            };
        }
        if r1 >= 0.9 && r0 >= 0.9 {
            return Verdict::Diverges {
                confidence: Confidence::Medium,
            };
        }
    } else if d2 <= tol * (1.0 + total) {
        return Verdict::Converges {
            value: total,
            tail_error: d2,
        };
    }
    Verdict::Inconclusive {
        reason: "norm growth pattern not resolved within cutoff budget".into(),
    }
}

/// Classify the right endpoint m of the problem at the reference
/// eigenvalue parameter lambda0 (default 0 for coercive problems).
pub fn classify_endpoint(
    prob: &SLProblem,
    lambda0: f64,
) -> Result<EndpointReport, ClassifyError> {
    let k = prob.k.clone();
    let p = prob.p.clone();
    let q1 = prob.q1.clone();
    let k_v = improper_integral(prob, |x| k.evaluate(x), prob.a)?;
    let p_v = improper_integral(prob, |x| Ok(1.0 / p.evaluate(x)?), prob.a)?;
    let q_v = improper_integral(prob, |x| Ok(q1.evaluate(x)?.abs()), prob.a)?;
    let all_converge = [&k_v, &p_v, &q_v]
        .iter()
        .all(|v| matches!(v, Verdict::Converges { .. }));
    if prob.m.is_finite() && all_converge {
        return Ok(EndpointReport {
            kind: EndpointKind::Regular,
            lambda0,
            k_integral: k_v,
            inv_p_integral: p_v,
            q_integral: q_v,
            solution_evidence: Vec::new(),
            oscillation: Vec::new(),
            confidence: Confidence::High,
        });
    }
    // Singular: count L2(k) solutions of tau u = lambda0 u near m.
    let inits = [(1.0, 0.0), (0.0, 1.0)];
    let mut evidence = Vec::new();
    let mut l2_count = 0usize;
    let mut confidence = Confidence::High;
    for (u0, pu0) in inits {
        let lps = chained_norm_log_partials(prob, lambda0, QuasiState::new(prob.a, u0, pu0))?;
        let v = verdict_from_log_partials(&lps, prob.truncation.tol);
        match &v {
            Verdict::Converges { .. } => l2_count += 1,
            Verdict::Diverges {
                confidence: Confidence::Medium,
            } => confidence = Confidence::Medium,
            Verdict::Diverges { .. } => {}
            Verdict::Inconclusive { reason } => {
                return Err(ClassifyError::Inconclusive(format!(
                    "norm verdict for solution ({u0}, {pu0}): {reason}"
                )))
            }
        }
        evidence.push(SolutionEvidence {
            initial: (u0, pu0),
            norm: v,
        });
    }
    let kind = if l2_count == 2 {
        EndpointKind::LimitCircle
    } else {
        EndpointKind::LimitPoint
    };
    let osc = oscillation_test(prob, lambda0, 4)?;
    Ok(EndpointReport {
        kind,
        lambda0,
        k_integral: k_v,
        inv_p_integral: p_v,
        q_integral: q_v,
        solution_evidence: evidence,
        oscillation: vec![(lambda0, osc)],
        confidence,
    })
}

/// Oscillation of tau u = lambda u near m: true when Pruefer zero counts
/// keep increasing on successive truncation windows.
pub fn oscillation_test(
    prob: &SLProblem,
    lambda: f64,
    window_count: usize,
) -> Result<bool, ClassifyError> {
    let cuts = &prob.truncation.cutoffs;
    if cuts.len() < 2 {
        return Err(ClassifyError::Inconclusive(
            "too few cutoffs for oscillation windows".into(),
        ));
    }
    let mut windows: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    if windows.len() > window_count {
        windows = windows.split_off(windows.len() - window_count);
    }
    let mut counts = Vec::new();
    for (lo, hi) in windows {
        let run = prufer_integrate(prob, lambda, lo, hi, std::f64::consts::FRAC_PI_2, 1e-8)?;
        counts.push(run.interior_zeros);
    }
    let n = counts.len();
    if n >= 2 && counts[n - 1] == 0 && counts[n - 2] == 0 {
        return Ok(false);
    }
    if n >= 2 && counts[n - 1] >= 1 && counts[n - 2] >= 1 {
        return Ok(true);
    }
    Err(ClassifyError::Inconclusive(format!(
        "zero counts per window neither vanish nor persist: {counts:?}"
    )))
}

#[derive(Debug, Clone)]
pub struct PrincipalPair {
    /// Principal solution: int 1/(p f^2) diverges at m, f/g -> 0.
    pub f: LinComb<f64>,
    /// Non-principal solution: int 1/(p g^2) converges at m.
    pub g: LinComb<f64>,
    /// Both f and g are positive on the sampled [s, m).
    pub s: f64,
    pub inv_sq_f: Verdict,
    pub inv_sq_g: Verdict,
    /// Samples of f/g at the cutoffs (decreasing to 0).
    pub ratio_samples: Vec<(f64, f64)>,
}

/// Relative verdict for int 1/(p u^2) from `from` toward m, with the
/// integrand normalized by its size at `from` (the convergence verdict
/// is scale-invariant; the returned value is the true integral scaled
/// by exp(-2 l_ref)).
fn inv_square_verdict(
    prob: &SLProblem,
    sol: &LinComb<f64>,
    from: f64,
) -> Result<(Verdict, f64), ClassifyError> {
    let (l_ref, _) = sol.log_abs_u(from);
    if !l_ref.is_finite() {
        return Err(ClassifyError::Inconclusive(format!(
            "solution vanishes at the test start x = {from}"
        )));
    }
    let shells = right_shells(prob, from);
    if shells.is_empty() {
        return Err(ClassifyError::Inconclusive(
            "no cutoff beyond the test start".into(),
        ));
    }
    let integrand = |x: f64| -> Result<f64, ExprError> {
        let (l, _) = sol.log_abs_u(x);
        let p = prob.p_at(x)?;
        Ok((-2.0 * (l - l_ref)).exp() / p)
    };
    let v = verdict_over_shells(integrand, &shells, prob.truncation.tol)?;
    Ok((v, l_ref))
}

fn sign_at(sol: &LinComb<f64>, x: f64) -> f64 {
    let phase = sol.log_abs_u(x).1;
    if phase == 0.0 {
        0.0
    } else {
        phase.signum()
    }
}

/// Principal and non-principal solutions f, g of tau u = 0 near m.
pub fn principal_pair(prob: &SLProblem) -> Result<PrincipalPair, ClassifyError> {
    if oscillation_test(prob, 0.0, 4)? {
        return Err(ClassifyError::Oscillatory { lambda: 0.0 });
    }
    let cuts = prob.truncation.cutoffs.clone();
    let big_x = prob.truncation.last();
    let opts = IntOpts::with_tol(1e-10);
    // Fundamental system backward from the largest cutoff: v1 launched
    // with (u, pu') = (1, 0) there, v2 with (0, 1).
    let v1 = LinComb::single(Calibrated::plain(integrate(
        prob,
        0.0f64,
        false,
        QuasiState::new(big_x, 1.0, 0.0),
        prob.a,
        &opts,
    )?));
    let grid = shell_grid(prob, prob.a, 40);
    let last_change = |sol: &LinComb<f64>| -> Option<f64> {
        let mut last = None;
        let mut prev = sign_at(sol, prob.a);
        for &x in &grid {
            if x >= big_x {
                break; // the anchor point itself may carry a hard zero
            }
            let sgn = sign_at(sol, x);
            if sgn != 0.0 && prev != 0.0 && sgn != prev {
                last = Some(x);
            }
            if sgn != 0.0 {
                prev = sgn;
            }
        }
        last
    };
    let tail_lo = cuts[cuts.len().saturating_sub(2)];
    let xm = tail_lo + 0.5 * (big_x - tail_lo); // middle of the last shell
    // First candidate: v1 itself, sign-fixed.
    let w1 = {
        let sgn = sign_at(&v1, xm);
        v1.scaled(if sgn < 0.0 { -1.0 } else { 1.0 })
    };
    let (u0, s0);
    if sign_at(&w1, xm) > 0.0 && last_change(&w1).is_none() {
        u0 = w1;
        s0 = prob.a;
    } else {
        // Rotate the initial data: the Dirichlet-at-cutoff solution w2
        // is positive just left of m but vanishes at the cutoff itself;
        // regularize with a small multiple of v1 (which is 1 there),
        // small enough to preserve positivity where v1 < 0.
        let v2 = LinComb::single(Calibrated::plain(integrate(
            prob,
            0.0f64,
            false,
            QuasiState::new(big_x, 0.0, 1.0),
            prob.a,
            &opts,
        )?));
        let w2 = v2.scaled(-1.0);
        let s_w2 = last_change(&w2).unwrap_or(prob.a);
        let mut upper_log = f64::INFINITY;
        for &x in grid.iter().filter(|&&x| x > s_w2 && x < big_x) {
            let (l2, sg2) = w2.log_abs_u(x);
            let (l1, sg1) = v1.log_abs_u(x);
            if sg1 < 0.0 && sg2 > 0.0 {
                upper_log = upper_log.min(l2 - l1);
            }
        }
        // Size cap: comparable to w2 in the middle of the last shell.
        let (l2m, sg2m) = w2.log_abs_u(xm);
        let (l1m, sg1m) = v1.log_abs_u(xm);
        let cap_log = if sg2m > 0.0 && sg1m > 0.0 {
            l2m - l1m
        } else {
            f64::INFINITY
        };
        let eta_log = cap_log.min(upper_log) - std::f64::consts::LN_2;
        if !eta_log.is_finite() {
            return Err(ClassifyError::Inconclusive(
                "no positive regularization of the cutoff solution found".into(),
            ));
        }
        u0 = w2.add_scaled(&v1, eta_log.exp());
        s0 = last_change(&u0).unwrap_or(prob.a);
    }
    // Positivity onset: last sign change plus one step.
    let c_next = cuts
        .iter()
        .copied()
        .find(|&c| c > s0)
        .unwrap_or(big_x);
    let s = if s0 > prob.a {
        s0 + (c_next - s0) / 40.0
    } else {
        s0
    };
    let (dv, _) = inv_square_verdict(prob, &u0, s)?;
    let check_from = cuts.iter().copied().find(|&c| c > s).unwrap_or(big_x);
    let (f, g, inv_sq_f, inv_sq_g) = match dv {
        Verdict::Diverges { .. } => {
            // u0 is principal; reduction of order for g:
            // g(s) = 0, (pg')(s) = 1/f(s). Launched at unit magnitude
            // with the 1/f(s) factor carried in the calibration.
            let f = u0;
            let (lf_s, sgn_f) = f.log_abs_u(s);
            if !(lf_s.is_finite() && sgn_f > 0.0) {
                return Err(ClassifyError::Inconclusive(format!(
                    "principal solution not positive at s = {s}"
                )));
            }
            let g_traj = integrate(
                prob,
                0.0f64,
                false,
                QuasiState::new(s, 0.0, 1.0),
                big_x,
                &opts,
            )?;
            let g = LinComb::single(Calibrated {
                traj: g_traj,
                coef: 1.0,
                ls_shift: -lf_s,
            });
            let (gv, _) = inv_square_verdict(prob, &g, check_from)?;
            if !matches!(gv, Verdict::Converges { .. }) {
                return Err(ClassifyError::Inconclusive(format!(
                    "reduction-of-order partner is not non-principal: {gv:?}"
                )));
            }
            (f, g, dv, gv)
        }
        Verdict::Converges { .. } => {
            // u0 is non-principal; f(x) = g(x) int_x^m 1/(p g^2).
            // Initial data assembled at the working scale w = ln f(s).
            let g = u0;
            let (v_true, l_ref) = inv_square_verdict(prob, &g, s)?;
            let c_rel = v_true.converged_value().unwrap();
            let l_c = c_rel.ln() - 2.0 * l_ref; // ln of the true integral
            let (us, pus, lf) = g.log_value(s);
            let lg_s = us.abs().ln() + lf;
            let sgn = us.signum();
            let w = lg_s + l_c; // ln f(s)
            let f_tilde = sgn;
            let pf_tilde = pus / us.abs() - sgn * (-2.0 * lg_s - l_c).exp();
            let f_traj = integrate(
                prob,
                0.0f64,
                false,
                QuasiState::new(s, f_tilde, pf_tilde),
                big_x,
                &opts,
            )?;
            let f = LinComb::single(Calibrated {
                traj: f_traj,
                coef: 1.0,
                ls_shift: w,
            });
            let (fv, _) = inv_square_verdict(prob, &f, check_from)?;
            if !fv.is_divergent() {
                return Err(ClassifyError::Inconclusive(format!(
                    "constructed principal candidate fails the divergence test: {fv:?}"
                )));
            }
            (f, g, fv, dv)
        }
        Verdict::Inconclusive { reason } => {
            return Err(ClassifyError::Inconclusive(format!(
                "1/(p u0^2) verdict: {reason}"
            )))
        }
    };
    // Re-verify positivity of both on [s, m) and the ratio decay.
    let grid = shell_grid(prob, s, 25);
    for &x in &grid {
        if sign_at(&f, x) <= 0.0 {
            return Err(ClassifyError::Inconclusive(format!(
                "principal solution not positive at x = {x}"
            )));
        }
        if sign_at(&g, x) <= 0.0 {
            return Err(ClassifyError::Inconclusive(format!(
                "non-principal solution not positive at x = {x}"
            )));
        }
    }
    // Ratio decay is sampled at cutoffs strictly below the anchor: at
    // the anchor itself the backward-launched solution carries a
    // non-principal admixture by construction.
    let mut ratio_samples = Vec::new();
    for &c in cuts.iter().filter(|&&c| c > s && c < big_x) {
        let (lf, _) = f.log_abs_u(c);
        let (lg, _) = g.log_abs_u(c);
        ratio_samples.push((c, (lf - lg).exp()));
    }
    for w in ratio_samples.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + 1e-6) {
            return Err(ClassifyError::Inconclusive(format!(
                "f/g not decreasing between x = {} and x = {}",
                w[0].0, w[1].0
            )));
        }
    }
    if let (Some(first), Some(last)) = (ratio_samples.first(), ratio_samples.last()) {
        if last.1 > 0.5 * first.1 {
            return Err(ClassifyError::Inconclusive(
                "f/g does not decay along the cutoff sequence".into(),
            ));
        }
    }
    Ok(PrincipalPair {
        f,
        g,
        s,
        inv_sq_f,
        inv_sq_g,
        ratio_samples,
    })
}

/// A positive gauge h, either symbolic or a computed solution of
/// tau u = lambda u (for which (ph')' = (q - lambda k) h exactly).
#[derive(Debug, Clone)]
pub enum GaugeFunction {
    Expr {
        h: Expression,
        /// p h'
        ph_prime: Expression,
        /// (p h')'
        ph_prime_prime: Expression,
    },
    Solution {
        sol: LinComb<f64>,
        lambda: f64,
    },
}

impl GaugeFunction {
    pub fn from_expr(h: Expression, p: &Expression) -> GaugeFunction {
        let ph_prime = p.mul(&h.differentiate());
        let ph_prime_prime = ph_prime.differentiate();
        GaugeFunction::Expr {
            h,
            ph_prime,
            ph_prime_prime,
        }
    }

    pub fn from_solution(sol: LinComb<f64>, lambda: f64) -> GaugeFunction {
        GaugeFunction::Solution { sol, lambda }
    }

    pub fn h_at(&self, x: f64) -> Result<f64, ExprError> {
        match self {
            GaugeFunction::Expr { h, .. } => h.evaluate(x),
            GaugeFunction::Solution { sol, .. } => Ok(sol.u(x)),
        }
    }

    /// (p h')'(x) / h(x).
    pub fn phh_over_h_at(&self, prob: &SLProblem, x: f64) -> Result<f64, ExprError> {
        match self {
            GaugeFunction::Expr {
                h, ph_prime_prime, ..
            } => Ok(ph_prime_prime.evaluate(x)? / h.evaluate(x)?),
            GaugeFunction::Solution { lambda, .. } => {
                Ok(prob.q1_at(x)? - lambda * prob.k_at(x)?)
            }
        }
    }

    /// Derived potential q_h = q - (ph')'/h (identically lambda*k for
    /// solution gauges).
    pub fn q_h_at(&self, prob: &SLProblem, x: f64) -> Result<f64, ExprError> {
        match self {
            GaugeFunction::Expr { .. } => Ok(prob.q1_at(x)? - self.phh_over_h_at(prob, x)?),
            GaugeFunction::Solution { lambda, .. } => Ok(lambda * prob.k_at(x)?),
        }
    }

    pub fn expression(&self) -> Option<&Expression> {
        match self {
            GaugeFunction::Expr { h, .. } => Some(h),
            GaugeFunction::Solution { .. } => None,
        }
    }

    /// ln h(x); overflow-safe for solution gauges.
    fn log_h_at(&self, x: f64) -> Result<(f64, f64), ExprError> {
        match self {
            GaugeFunction::Expr { h, .. } => {
                let v = h.evaluate(x)?;
                Ok((v.abs().ln(), v.signum()))
            }
            GaugeFunction::Solution { sol, .. } => Ok({
                let (l, s) = sol.log_abs_u(x);
                (l, s)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum GaugeType {
    /// int 1/(p h^2) = infinity: Friedrichs domain description via the
    /// vanishing-ratio condition.
    PrincipalType,
    /// int 1/(p h^2) < infinity.
    NonPrincipalType,
    Undetermined,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct KalfReport {
    pub mu: f64,
    pub s: f64,
    /// The criterion certifies coercivity only when mu > 0.
    pub coercive: bool,
    pub min_margin: f64,
    pub gauge_type: GaugeType,
    pub inv_ph2: Verdict,
}

/// Verify q >= (ph')'/h + mu k on the sampled [s, m) and classify the
/// gauge as principal- or non-principal-type.
pub fn kalf_check(
    prob: &SLProblem,
    h: &GaugeFunction,
    mu: f64,
    s: f64,
    grid: usize,
) -> Result<KalfReport, ClassifyError> {
    let pts = {
        let mut pts = shell_grid(prob, s, grid.max(4) / 4);
        pts.insert(0, s);
        pts
    };
    let mut witnesses = Vec::new();
    let mut min_margin = f64::INFINITY;
    for &x in &pts {
        let hv = h.h_at(x)?;
        if !(hv > 0.0) {
            return Err(ClassifyError::GaugeNotPositive { x });
        }
        let q = prob.q1_at(x)?;
        let margin = q - h.phh_over_h_at(prob, x)? - mu * prob.k_at(x)?;
        min_margin = min_margin.min(margin);
        if margin < -1e-8 * (1.0 + q.abs()) {
            witnesses.push((x, margin));
        }
    }
    if !witnesses.is_empty() {
        return Err(ClassifyError::InequalityViolation { witnesses });
    }
    // int_s^m 1/(p h^2): scale-invariant relative form.
    let (l_ref, _) = h.log_h_at(s)?;
    let shells = right_shells(prob, s);
    let integrand = |x: f64| -> Result<f64, ExprError> {
        let (l, _) = h.log_h_at(x)?;
        Ok((-2.0 * (l - l_ref)).exp() / prob.p_at(x)?)
    };
    let inv_ph2 = verdict_over_shells(integrand, &shells, prob.truncation.tol)?;
    let gauge_type = match &inv_ph2 {
        Verdict::Diverges { .. } => GaugeType::PrincipalType,
        Verdict::Converges { .. } => GaugeType::NonPrincipalType,
        Verdict::Inconclusive { .. } => GaugeType::Undetermined,
    };
    Ok(KalfReport {
        mu,
        s,
        coercive: mu > 0.0,
        min_margin,
        gauge_type,
        inv_ph2,
    })
}

/// Max over samples of |LHS - RHS| for the factorization identity
/// -(pu')' + ((ph')'/h) u = -(1/h) [p h^2 (u/h)']', all sides built
/// symbolically.
pub fn jacobi_residual(
    prob: &SLProblem,
    h: &GaugeFunction,
    u: &Expression,
    sample_xs: &[f64],
) -> Result<f64, ClassifyError> {
    let (h_e, phh) = match h {
        GaugeFunction::Expr {
            h, ph_prime_prime, ..
        } => (h, ph_prime_prime),
        GaugeFunction::Solution { .. } => return Err(ClassifyError::NotSymbolic),
    };
    let pu_prime = prob.p.mul(&u.differentiate());
    let lhs = pu_prime.differentiate().neg().add(&phh.div(h_e).mul(u));
    let inner = prob
        .p
        .mul(h_e)
        .mul(h_e)
        .mul(&u.div(h_e).differentiate());
    let rhs = inner.differentiate().div(h_e).neg();
    let mut worst = 0.0f64;
    for &x in sample_xs {
        let d = (lhs.evaluate(x)? - rhs.evaluate(x)?).abs();
        worst = worst.max(d);
    }
    Ok(worst)
}
