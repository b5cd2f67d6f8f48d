//! Adaptive integration of tau(u) = lambda*u as the first-order
//! quasi-derivative system u' = (pu')/p, (pu')' = (q - lambda k) u,
//! in real or complex arithmetic.
//!
//! Solutions of coercive problems grow exponentially, so the integrator
//! supports renormalized integration: when |u| or |pu| exceeds a
//! threshold the state is rescaled (linearity permits it) and the
//! accumulated log-scale factor is carried along. Auxiliary quadratures
//! (the weighted norm and the reduction-of-order integral) are
//! accumulated on the same adaptive grid.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::ExprError;
use crate::problem::SLProblem;

pub type Cx = Complex64;

/// Rescaling threshold for renormalized integration.
const RESCALE_AT: f64 = 1e100;

pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn norm(self) -> f64;
    fn scale(self, f: f64) -> Self;
    fn is_finite_s(self) -> bool;
    /// Potential q (or conj q for the adjoint expression) as a scalar.
    fn q_of(prob: &SLProblem, x: f64, adjoint: bool) -> Result<Self, ExprError>;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn norm(self) -> f64 {
        self.abs()
    }
    fn scale(self, f: f64) -> Self {
        self * f
    }
    fn is_finite_s(self) -> bool {
        self.is_finite()
    }
    fn q_of(prob: &SLProblem, x: f64, _adjoint: bool) -> Result<Self, ExprError> {
        prob.q1_at(x)
    }
}

impl Scalar for Cx {
    fn from_f64(v: f64) -> Self {
        Cx::new(v, 0.0)
    }
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
    fn scale(self, f: f64) -> Self {
        self * f
    }
    fn is_finite_s(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn q_of(prob: &SLProblem, x: f64, adjoint: bool) -> Result<Self, ExprError> {
        prob.q_cx(x, adjoint)
    }
}

/// The pair (u, pu') at a point; the fundamental unknown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiState<S> {
    pub x: f64,
    pub u: S,
    pub pu: S,
}

impl<S: Scalar> QuasiState<S> {
    pub fn new(x: f64, u: S, pu: S) -> QuasiState<S> {
        QuasiState { x, u, pu }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size collapsed near x = {x} (closest approach to a singularity)")]
    StepFailure { x: f64 },
    #[error("solution overflowed at x = {x} with renormalization disabled")]
    Overflow { x: f64 },
    #[error("step budget exhausted at x = {x}")]
    MaxSteps { x: f64 },
    #[error("trivial initial state (u, pu') = (0, 0)")]
    TrivialStart,
    #[error(transparent)]
    Domain(#[from] ExprError),
}

#[derive(Debug, Clone, Copy)]
pub struct IntOpts {
    pub tol: f64,
    pub renormalize: bool,
    /// Accumulate aux[0] = integral of k |u|^2 dx.
    pub track_norm: bool,
    /// Accumulate aux[1] = integral of 1/(p |u|^2) dx.
    pub track_inv: bool,
    pub init_aux: [f64; 2],
    pub init_log_scale: f64,
    pub max_steps: usize,
}

impl Default for IntOpts {
    fn default() -> Self {
        IntOpts {
            tol: 1e-10,
            renormalize: true,
            track_norm: false,
            track_inv: false,
            init_aux: [0.0, 0.0],
            init_log_scale: 0.0,
            max_steps: 1_000_000,
        }
    }
}

impl IntOpts {
    pub fn with_tol(tol: f64) -> IntOpts {
        IntOpts {
            tol,
            ..IntOpts::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Node<S> {
    pub x: f64,
    pub u: S,
    pub pu: S,
    pub du: S,
    pub dpu: S,
    pub log_scale: f64,
    pub aux: [f64; 2],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub steps: usize,
    pub rejected: usize,
    pub rescales: usize,
}

/// Dense solution of the quasi-derivative system along one direction.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub nodes: Vec<Node<S>>,
    pub stats: Stats,
}

impl<S: Scalar> Trajectory<S> {
    pub fn first(&self) -> &Node<S> {
        self.nodes.first().expect("empty trajectory")
    }
    pub fn last(&self) -> &Node<S> {
        self.nodes.last().expect("empty trajectory")
    }

    pub fn x_start(&self) -> f64 {
        self.first().x
    }
    pub fn x_end(&self) -> f64 {
        self.last().x
    }

    fn ascending(&self) -> bool {
        self.x_end() >= self.x_start()
    }

    /// Scaled state at `x`: true (u, pu') = returned values times
    /// exp(log_scale). Cubic Hermite between adaptive nodes.
    pub fn eval_scaled(&self, x: f64) -> (S, S, f64) {
        let n = self.nodes.len();
        if n == 1 {
            let nd = &self.nodes[0];
            return (nd.u, nd.pu, nd.log_scale);
        }
        let asc = self.ascending();
        // Binary search for the interval containing x, clamped.
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let before = if asc {
                self.nodes[mid].x <= x
            } else {
                self.nodes[mid].x >= x
            };
            if before {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let n0 = &self.nodes[lo];
        let n1 = &self.nodes[hi];
        let ls = n0.log_scale.max(n1.log_scale);
        let f0 = (n0.log_scale - ls).exp();
        let f1 = (n1.log_scale - ls).exp();
        let h = n1.x - n0.x;
        if h == 0.0 {
            return (n0.u.scale(f0), n0.pu.scale(f0), ls);
        }
        let t = (x - n0.x) / h;
        let h00 = (2.0 * t - 3.0) * t * t + 1.0;
        let h10 = ((t - 2.0) * t + 1.0) * t;
        let h01 = (3.0 - 2.0 * t) * t * t;
        let h11 = (t - 1.0) * t * t;
        let interp = |y0: S, d0: S, y1: S, d1: S| {
            y0.scale(h00) + d0.scale(h10 * h) + y1.scale(h01) + d1.scale(h11 * h)
        };
        let u = interp(
            n0.u.scale(f0),
            n0.du.scale(f0),
            n1.u.scale(f1),
            n1.du.scale(f1),
        );
        let pu = interp(
            n0.pu.scale(f0),
            n0.dpu.scale(f0),
            n1.pu.scale(f1),
            n1.dpu.scale(f1),
        );
        (u, pu, ls)
    }

    /// Unscaled state; may overflow for strongly growing solutions.
    pub fn eval(&self, x: f64) -> (S, S) {
        let (u, pu, ls) = self.eval_scaled(x);
        let f = ls.exp();
        (u.scale(f), pu.scale(f))
    }

    pub fn end_state(&self) -> QuasiState<S> {
        let n = self.last();
        QuasiState::new(n.x, n.u, n.pu)
    }
}

/// A trajectory together with a calibration: the represented function
/// is coef * u * exp(log_scale + ls_shift). Used for sign fixing and for
/// normalizations such as psi(a) = 1.
#[derive(Debug, Clone)]
pub struct Calibrated<S: Scalar> {
    pub traj: Trajectory<S>,
    pub coef: S,
    pub ls_shift: f64,
}

impl<S: Scalar> Calibrated<S> {
    pub fn plain(traj: Trajectory<S>) -> Calibrated<S> {
        Calibrated {
            traj,
            coef: S::one(),
            ls_shift: 0.0,
        }
    }

    /// Calibrate so that the represented function takes value `target`
    /// at `x` (errors elsewhere if the raw value vanishes).
    pub fn normalized_at(traj: Trajectory<S>, x: f64, target: S) -> Option<Calibrated<S>> {
        let (u, _pu, ls) = traj.eval_scaled(x);
        if u.norm() == 0.0 {
            return None;
        }
        Some(Calibrated {
            traj,
            coef: target / u,
            ls_shift: -ls,
        })
    }

    /// Scaled value: true (u, pu') = returned pair times exp(log_factor).
    pub fn log_value(&self, x: f64) -> (S, S, f64) {
        let (u, pu, ls) = self.traj.eval_scaled(x);
        (self.coef * u, self.coef * pu, ls + self.ls_shift)
    }

    /// Plain value (u, pu'); may overflow for strongly growing solutions.
    pub fn value(&self, x: f64) -> (S, S) {
        let (u, pu, lf) = self.log_value(x);
        let f = lf.exp();
        (u.scale(f), pu.scale(f))
    }

    pub fn u(&self, x: f64) -> S {
        self.value(x).0
    }

    /// ln |u(x)| and the sign/phase part u/|u|, overflow-safe.
    pub fn log_abs_u(&self, x: f64) -> (f64, S) {
        let (u, _pu, lf) = self.log_value(x);
        let n = u.norm();
        if n == 0.0 {
            (f64::NEG_INFINITY, S::zero())
        } else {
            (n.ln() + lf, u.scale(1.0 / n))
        }
    }
}

/// A linear combination of calibrated trajectories, evaluated with all
/// terms aligned to a common log scale (so wildly different magnitudes
/// combine without overflow).
#[derive(Debug, Clone)]
pub struct LinComb<S: Scalar> {
    pub terms: Vec<Calibrated<S>>,
}

impl<S: Scalar> LinComb<S> {
    pub fn single(c: Calibrated<S>) -> LinComb<S> {
        LinComb { terms: vec![c] }
    }

    pub fn two(a: Calibrated<S>, b: Calibrated<S>) -> LinComb<S> {
        LinComb { terms: vec![a, b] }
    }

    /// self + w * other.
    pub fn add_scaled(&self, other: &LinComb<S>, w: S) -> LinComb<S> {
        let mut terms = self.terms.clone();
        for t in &other.terms {
            terms.push(Calibrated {
                traj: t.traj.clone(),
                coef: t.coef * w,
                ls_shift: t.ls_shift,
            });
        }
        LinComb { terms }
    }

    pub fn scaled(&self, w: S) -> LinComb<S> {
        let terms = self
            .terms
            .iter()
            .map(|t| Calibrated {
                traj: t.traj.clone(),
                coef: t.coef * w,
                ls_shift: t.ls_shift,
            })
            .collect();
        LinComb { terms }
    }

    /// Scaled value: true (u, pu') = returned pair times exp(log_factor).
    pub fn log_value(&self, x: f64) -> (S, S, f64) {
        let parts: Vec<(S, S, f64)> = self.terms.iter().map(|t| t.log_value(x)).collect();
        let lf = parts
            .iter()
            .map(|p| p.2)
            .fold(f64::NEG_INFINITY, f64::max);
        if !lf.is_finite() {
            return (S::zero(), S::zero(), 0.0);
        }
        let mut u = S::zero();
        let mut pu = S::zero();
        for (ui, pui, lfi) in parts {
            let f = (lfi - lf).exp();
            u = u + ui.scale(f);
            pu = pu + pui.scale(f);
        }
        (u, pu, lf)
    }

    pub fn value(&self, x: f64) -> (S, S) {
        let (u, pu, lf) = self.log_value(x);
        let f = lf.exp();
        (u.scale(f), pu.scale(f))
    }

    pub fn u(&self, x: f64) -> S {
        self.value(x).0
    }

    /// ln |u(x)| and the phase u/|u|, overflow-safe.
    pub fn log_abs_u(&self, x: f64) -> (f64, S) {
        let (u, _pu, lf) = self.log_value(x);
        let n = u.norm();
        if n == 0.0 {
            (f64::NEG_INFINITY, S::zero())
        } else {
            (n.ln() + lf, u.scale(1.0 / n))
        }
    }
}

/// p(u1 u2' - u1' u2)(x), computed as u1 * pu2 - pu1 * u2.
pub fn wronskian<S: Scalar>(t1: &Trajectory<S>, t2: &Trajectory<S>, x: f64) -> S {
    let (w, ls) = wronskian_scaled(t1, t2, x);
    w.scale(ls.exp())
}

/// Scaled Wronskian: true value = w * exp(log_scale).
pub fn wronskian_scaled<S: Scalar>(
    t1: &Trajectory<S>,
    t2: &Trajectory<S>,
    x: f64,
) -> (S, f64) {
    let (u1, pu1, ls1) = t1.eval_scaled(x);
    let (u2, pu2, ls2) = t2.eval_scaled(x);
    (u1 * pu2 - pu1 * u2, ls1 + ls2)
}

// ---- Dormand-Prince 5(4) ------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct St<S> {
    u: S,
    pu: S,
    aux: [f64; 2],
}

impl<S: Scalar> St<S> {
    fn axpy(self, w: f64, o: St<S>) -> St<S> {
        St {
            u: self.u + o.u.scale(w),
            pu: self.pu + o.pu.scale(w),
            aux: [self.aux[0] + w * o.aux[0], self.aux[1] + w * o.aux[1]],
        }
    }
    fn zero() -> St<S> {
        St {
            u: S::zero(),
            pu: S::zero(),
            aux: [0.0, 0.0],
        }
    }
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrate the quasi-derivative system from `start` to `target_x`
/// (either direction), for tau u = lambda u, or tau+ u = lambda u when
/// `adjoint` is set.
pub fn integrate<S: Scalar>(
    prob: &SLProblem,
    lambda: S,
    adjoint: bool,
    start: QuasiState<S>,
    target_x: f64,
    opts: &IntOpts,
) -> Result<Trajectory<S>, OdeError> {
    if start.u.norm() == 0.0 && start.pu.norm() == 0.0 {
        return Err(OdeError::TrivialStart);
    }
    let rhs = |x: f64, st: &St<S>| -> Result<St<S>, ExprError> {
        let p = prob.p_at(x)?;
        let k = prob.k_at(x)?;
        let q = S::q_of(prob, x, adjoint)?;
        let du = st.pu.scale(1.0 / p);
        let dpu = (q - lambda.scale(k)) * st.u;
        let n2 = st.u.norm().powi(2);
        let a0 = if opts.track_norm { k * n2 } else { 0.0 };
        let a1 = if opts.track_inv { 1.0 / (p * n2) } else { 0.0 };
        Ok(St {
            u: du,
            pu: dpu,
            aux: [a0, a1],
        })
    };
    drive(rhs, start, target_x, opts)
}

fn drive<S, F>(
    rhs: F,
    start: QuasiState<S>,
    target_x: f64,
    opts: &IntOpts,
) -> Result<Trajectory<S>, OdeError>
where
    S: Scalar,
    F: Fn(f64, &St<S>) -> Result<St<S>, ExprError>,
{
    let mut x = start.x;
    let mut y = St {
        u: start.u,
        pu: start.pu,
        aux: opts.init_aux,
    };
    let mut log_scale = opts.init_log_scale;
    let mut stats = Stats::default();
    let span = target_x - x;
    if span == 0.0 {
        let d = rhs(x, &y)?;
        return Ok(Trajectory {
            nodes: vec![Node {
                x,
                u: y.u,
                pu: y.pu,
                du: d.u,
                dpu: d.pu,
                log_scale,
                aux: y.aux,
            }],
            stats,
        });
    }
    let dir = span.signum();
    let mut h = span / 100.0;
    let mut nodes: Vec<Node<S>> = Vec::new();
    {
        let d = rhs(x, &y)?;
        nodes.push(Node {
            x,
            u: y.u,
            pu: y.pu,
            du: d.u,
            dpu: d.pu,
            log_scale,
            aux: y.aux,
        });
    }
    let atol = opts.tol;
    let rtol = opts.tol;
    loop {
        if (target_x - x) * dir <= 0.0 {
            break;
        }
        if stats.steps + stats.rejected > opts.max_steps {
            return Err(OdeError::MaxSteps { x });
        }
        if (x + h - target_x) * dir > 0.0 {
            h = target_x - x;
        }
        // Stages.
        let k1 = rhs(x, &y)?;
        let mut ks: Vec<St<S>> = Vec::with_capacity(7);
        ks.push(k1);
        let mut failed_stage = false;
        for i in 0..6 {
            let mut yi = y;
            for (j, kj) in ks.iter().enumerate() {
                yi = yi.axpy(h * A[i][j], *kj);
            }
            match rhs(x + C[i] * h, &yi) {
                Ok(ki) => ks.push(ki),
                Err(_) => {
                    failed_stage = true;
                    break;
                }
            }
        }
        if failed_stage {
            stats.rejected += 1;
            h *= 0.5;
            if h.abs() < 1e-14 * (1.0 + x.abs()) {
                return Err(OdeError::StepFailure { x });
            }
            continue;
        }
        // 5th-order solution = y + h * sum(A[5][j] k_j) plus k7 weight 0.
        let mut ynew = y;
        for (j, kj) in ks.iter().take(6).enumerate() {
            ynew = ynew.axpy(h * A[5][j], *kj);
        }
        // Error estimate.
        let mut edst = St::<S>::zero();
        for (j, kj) in ks.iter().enumerate() {
            edst = edst.axpy(h * E[j], *kj);
        }
        let sc_u = atol + rtol * ynew.u.norm().max(y.u.norm());
        let sc_pu = atol + rtol * ynew.pu.norm().max(y.pu.norm());
        let err = (edst.u.norm() / sc_u).max(edst.pu.norm() / sc_pu);
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.5;
            if h.abs() < 1e-14 * (1.0 + x.abs()) {
                return Err(OdeError::StepFailure { x });
            }
            continue;
        }
        if err <= 1.0 {
            // Accept. k7 = f(x + h, ynew) is the derivative there.
            x += h;
            y = ynew;
            let mut d_new = ks[6];
            stats.steps += 1;
            let mag = y.u.norm().max(y.pu.norm());
            if mag > RESCALE_AT {
                if !opts.renormalize {
                    return Err(OdeError::Overflow { x });
                }
                let c = mag;
                y.u = y.u.scale(1.0 / c);
                y.pu = y.pu.scale(1.0 / c);
                d_new.u = d_new.u.scale(1.0 / c);
                d_new.pu = d_new.pu.scale(1.0 / c);
                y.aux[0] /= c * c;
                y.aux[1] *= c * c;
                log_scale += c.ln();
                stats.rescales += 1;
            }
            if !y.u.is_finite_s() || !y.pu.is_finite_s() {
                return Err(OdeError::Overflow { x });
            }
            nodes.push(Node {
                x,
                u: y.u,
                pu: y.pu,
                du: d_new.u,
                dpu: d_new.pu,
                log_scale,
                aux: y.aux,
            });
            let grow = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h = (h * grow).clamp(-span.abs(), span.abs());
            if h == 0.0 {
                h = (target_x - x) / 100.0;
            }
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.1);
            if h.abs() < 1e-14 * (1.0 + x.abs()) {
                return Err(OdeError::StepFailure { x });
            }
        }
    }
    Ok(Trajectory { nodes, stats })
}

// ---- Pruefer angle -------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PruferRun {
    pub theta_start: f64,
    pub theta_end: f64,
    /// Zeros of u strictly inside the integration interval.
    pub interior_zeros: usize,
}

/// Integrate the Pruefer angle theta:
/// u = r sin(theta), pu' = r cos(theta),
/// theta' = cos^2(theta)/p + (lambda k - q) sin^2(theta).
/// Real self-adjoint mode only.
pub fn prufer_integrate(
    prob: &SLProblem,
    lambda: f64,
    x0: f64,
    x1: f64,
    theta0: f64,
    tol: f64,
) -> Result<PruferRun, OdeError> {
    let rhs = |x: f64, st: &St<f64>| -> Result<St<f64>, ExprError> {
        let p = prob.p_at(x)?;
        let k = prob.k_at(x)?;
        let q = prob.q1_at(x)?;
        let (s, c) = st.u.sin_cos();
        Ok(St {
            u: c * c / p + (lambda * k - q) * s * s,
            pu: 0.0,
            aux: [0.0, 0.0],
        })
    };
    let opts = IntOpts {
        tol,
        renormalize: false,
        ..IntOpts::default()
    };
    let traj = drive(rhs, QuasiState::new(x0, theta0, 1.0), x1, &opts)?;
    let theta_end = traj.last().u;
    Ok(PruferRun {
        theta_start: theta0,
        theta_end,
        interior_zeros: zeros_between(theta0, theta_end),
    })
}

/// Multiples of pi strictly between the two angles (the Pruefer angle
/// crosses k*pi only upward, so this counts the zeros of u).
pub fn zeros_between(theta0: f64, theta1: f64) -> usize {
    let pi = std::f64::consts::PI;
    let guard = 1e-9 * (1.0 + theta1.abs());
    let k_min = (theta0 / pi + guard).floor() as i64 + 1;
    let k_max = ((theta1 - guard) / pi).ceil() as i64 - 1;
    let k_min = k_min.max(1); // theta = 0 is not a zero of a nontrivial u
    if k_max >= k_min {
        (k_max - k_min + 1) as usize
    } else {
        0
    }
}

/// Number of interior zeros of the solution launched with initial
/// Pruefer angle `bc_angle` at `x0`.
pub fn prufer_zero_count(
    prob: &SLProblem,
    lambda: f64,
    over: (f64, f64),
    bc_angle: f64,
    tol: f64,
) -> Result<usize, OdeError> {
    let run = prufer_integrate(prob, lambda, over.0, over.1, bc_angle, tol)?;
    Ok(run.interior_zeros)
}
