//! Eigenvalue solvers for (problem, extension) pairs: real spectra by
//! Pruefer shooting / subdominant matching, limit-circle bracket
//! spectra by det M(lambda), sectorial spectra by argument-principle
//! winding with Newton polish.

use num_complex::Complex64;
use thiserror::Error;

use crate::classify::{classify_endpoint, ClassifyError, EndpointKind};
use crate::expr::ExprError;
use crate::extensions::{
    bracket, kernel_basis, limit_along_cutoffs, singular_values_2x2, BracketAt, ExtError,
    ExtensionSpec, KernelBasis,
};
use crate::forms::Sector;
use crate::ode::{
    integrate, prufer_integrate, Calibrated, IntOpts, LinComb, OdeError, QuasiState,
};
use crate::problem::{improper_integral, tail_integral, ProblemError, SLProblem, Verdict};

pub type Cx = Complex64;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("window exhausted: found {} of {requested} eigenvalue(s)", spectrum.eigenvalues.len())]
    WindowExhausted {
        spectrum: Box<Spectrum>,
        requested: usize,
    },
    #[error("eigenvalue near {lambda} drifts by {drift:e} between cutoffs")]
    TruncationUnconverged { lambda: f64, drift: f64 },
    #[error("argument-principle winding {winding} does not match {found} polished root(s)")]
    WindingMismatch { winding: i64, found: usize },
    #[error("lambda is not an eigenvalue (boundary residual {residual:e})")]
    NotAnEigenvalue { residual: f64 },
    #[error("solver did not converge: {0}")]
    NonConvergent(String),
    #[error("unsupported case: {0}")]
    UnsupportedCase(String),
    #[error(transparent)]
    Ext(#[from] ExtError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone)]
pub struct Eigen {
    pub n: usize,
    pub lambda: Cx,
    /// Normalized boundary-condition residual at lambda.
    pub residual: f64,
    /// Relative movement between the two largest cutoffs.
    pub drift: f64,
    pub converged: bool,
    /// Sector membership flag (sectorial mode with a sector supplied).
    pub in_sector: Option<bool>,
}

#[derive(Debug, Clone)]
pub enum Window {
    Real(f64, f64),
    Rect { re: (f64, f64), im: (f64, f64) },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub miss_evals: usize,
    pub bisection_steps: usize,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Eigen>,
    pub window: Window,
    pub essential_floor: Option<f64>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy)]
pub struct RealOpts {
    /// Override the essential-spectrum floor estimate.
    pub floor_override: Option<f64>,
    /// Match against a Dirichlet truncation instead of the subdominant
    /// solution (cross-checking flag).
    pub dirichlet_truncation: bool,
    /// Lambda-grid resolution for the sign scan.
    pub grid: usize,
}

impl Default for RealOpts {
    fn default() -> Self {
        RealOpts {
            floor_override: None,
            dirichlet_truncation: false,
            grid: 64,
        }
    }
}

/// Floor estimate for the essential spectrum: min of q/k over the
/// outer quarter of the truncated domain.
pub fn essential_floor(prob: &SLProblem) -> Result<f64, SpectralError> {
    let big_x = prob.truncation.last();
    let lo = prob.a + 0.75 * (big_x - prob.a);
    let mut floor = f64::INFINITY;
    for i in 0..=64 {
        let x = lo + (big_x - lo) * (i as f64) / 64.0;
        floor = floor.min(prob.q1_at(x)? / prob.k_at(x)?);
    }
    Ok(floor)
}

fn robin_theta_of(spec: &ExtensionSpec) -> Result<Option<f64>, SpectralError> {
    match spec {
        ExtensionSpec::RobinLp(d) | ExtensionSpec::Krein(d) => Ok(Some(d.theta)),
        ExtensionSpec::Friedrichs => Ok(None),
        _ => Err(SpectralError::UnsupportedCase(
            "eigenvalues_real handles RobinLP/Krein/Friedrichs conditions".into(),
        )),
    }
}

/// Wronskian miss function of the limit-point Robin problem:
/// boundary condition at a applied to the backward subdominant
/// solution. Sign-exact (a positive scale factor is dropped).
fn miss_lp(
    prob: &SLProblem,
    lambda: f64,
    theta: Option<f64>,
    anchor: f64,
    dirichlet_truncation: bool,
    stats: &mut SolveStats,
) -> Result<(f64, f64), SpectralError> {
    stats.miss_evals += 1;
    let (u0, pu0) = if dirichlet_truncation { (0.0, 1.0) } else { (1.0, 0.0) };
    let opts = IntOpts::with_tol(1e-11);
    let traj = integrate(
        prob,
        lambda,
        false,
        QuasiState::new(anchor, u0, pu0),
        prob.a,
        &opts,
    )?;
    let (u, pu, _ls) = traj.eval_scaled(prob.a);
    let m = match theta {
        Some(t) => pu - t * u,
        None => u,
    };
    Ok((m, u.abs() + pu.abs()))
}

fn bisect_miss(
    prob: &SLProblem,
    theta: Option<f64>,
    anchor: f64,
    dirichlet_truncation: bool,
    mut lo: (f64, f64),
    mut hi: (f64, f64),
    stats: &mut SolveStats,
) -> Result<(f64, f64), SpectralError> {
    // lo/hi are (lambda, miss) with opposite signs.
    for _ in 0..200 {
        let mid = 0.5 * (lo.0 + hi.0);
        if (hi.0 - lo.0).abs() < 1e-10 * (1.0 + mid.abs()) {
            break;
        }
        stats.bisection_steps += 1;
        let (m, scale) = miss_lp(prob, mid, theta, anchor, dirichlet_truncation, stats)?;
        if m == 0.0 {
            return Ok((mid, 0.0 / scale.max(1e-300)));
        }
        if (m > 0.0) == (lo.1 > 0.0) {
            lo = (mid, m);
        } else {
            hi = (mid, m);
        }
    }
    let lambda = 0.5 * (lo.0 + hi.0);
    let (m, scale) = miss_lp(prob, lambda, theta, anchor, dirichlet_truncation, stats)?;
    Ok((lambda, m.abs() / scale.max(1e-300)))
}

fn prufer_theta_a(theta: Option<f64>) -> f64 {
    match theta {
        // tan(theta_a) = u/pu' = 1/theta_R, branch in (0, pi).
        Some(t) => 1.0f64.atan2(t),
        None => 0.0,
    }
}

/// Real spectrum of a Robin/Dirichlet condition at a: Pruefer shooting
/// for regular problems, subdominant matching for limit-point ones.
pub fn eigenvalues_real(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    window: (f64, f64),
    max_count: usize,
    opts: &RealOpts,
) -> Result<Spectrum, SpectralError> {
    let theta = robin_theta_of(spec)?;
    if prob.is_sectorial() {
        return Err(SpectralError::UnsupportedCase(
            "eigenvalues_real requires self-adjoint mode".into(),
        ));
    }
    let kind = classify_endpoint(prob, 0.0)?.kind;
    let mut stats = SolveStats::default();
    if kind == EndpointKind::Regular {
        return eigenvalues_regular(prob, theta, window, max_count, &mut stats);
    }
    // Limit-point (or limit-circle treated through its Robin reduction):
    // clip the window below the essential floor.
    let floor = match opts.floor_override {
        Some(f) => f,
        None => essential_floor(prob)?,
    };
    let hi_eff = window.1.min(floor - 1e-3 * (1.0 + floor.abs()));
    if hi_eff <= window.0 {
        return Err(SpectralError::UnsupportedCase(format!(
            "search window [{}, {}] lies above the essential floor estimate {floor}",
            window.0, window.1
        )));
    }
    let cuts = &prob.truncation.cutoffs;
    let anchor = cuts[cuts.len() - 1];
    let anchor_prev = cuts[cuts.len() - 2];
    // Sign scan on a grid, refined where the Pruefer zero count jumps
    // by more than one (possible sign-preserving root pairs).
    let mut grid: Vec<f64> = (0..=opts.grid)
        .map(|i| window.0 + (hi_eff - window.0) * (i as f64) / (opts.grid as f64))
        .collect();
    for _round in 0..3 {
        let mut counts = Vec::with_capacity(grid.len());
        for &l in &grid {
            counts.push(crate::ode::prufer_zero_count(
                prob,
                l,
                (prob.a, anchor),
                prufer_theta_a(theta).max(1e-12),
                1e-8,
            )?);
        }
        let mut refined = Vec::new();
        let mut changed = false;
        for i in 0..grid.len() - 1 {
            refined.push(grid[i]);
            if counts[i + 1] > counts[i] + 1 {
                refined.push(0.5 * (grid[i] + grid[i + 1]));
                changed = true;
            }
        }
        refined.push(*grid.last().unwrap());
        grid = refined;
        if !changed {
            break;
        }
    }
    let misses: Vec<(f64, f64)> = {
        let mut v = Vec::with_capacity(grid.len());
        for &l in &grid {
            let (m, _) = miss_lp(prob, l, theta, anchor, opts.dirichlet_truncation, &mut stats)?;
            v.push((l, m));
        }
        v
    };
    let mut eigenvalues = Vec::new();
    for i in 0..misses.len() - 1 {
        if eigenvalues.len() >= max_count {
            break;
        }
        let (a, b) = (misses[i], misses[i + 1]);
        if a.1 == 0.0 {
            eigenvalues.push((a.0, 0.0));
            continue;
        }
        if (a.1 > 0.0) != (b.1 > 0.0) {
            let (l, r) = bisect_miss(
                prob,
                theta,
                anchor,
                opts.dirichlet_truncation,
                a,
                b,
                &mut stats,
            )?;
            eigenvalues.push((l, r));
        }
    }
    // Two-cutoff convergence check (Richardson-style agreement).
    let mut out = Vec::new();
    for (idx, &(l, residual)) in eigenvalues.iter().enumerate() {
        let l_prev = refind_at_cutoff(
            prob,
            theta,
            anchor_prev,
            opts.dirichlet_truncation,
            l,
            hi_eff,
            window.0,
            &mut stats,
        )?;
        let drift = match l_prev {
            Some(lp) => (l - lp).abs() / (1.0 + l.abs()),
            None => f64::INFINITY,
        };
        if drift > 1e-6 {
            return Err(SpectralError::TruncationUnconverged { lambda: l, drift });
        }
        out.push(Eigen {
            n: idx + 1,
            lambda: Cx::new(l, 0.0),
            residual,
            drift,
            converged: true,
            in_sector: None,
        });
    }
    let spectrum = Spectrum {
        eigenvalues: out,
        window: Window::Real(window.0, hi_eff),
        essential_floor: Some(floor),
        stats,
    };
    if spectrum.eigenvalues.len() < max_count {
        return Err(SpectralError::WindowExhausted {
            spectrum: Box::new(spectrum),
            requested: max_count,
        });
    }
    Ok(spectrum)
}

#[allow(clippy::too_many_arguments)]
fn refind_at_cutoff(
    prob: &SLProblem,
    theta: Option<f64>,
    anchor: f64,
    dirichlet_truncation: bool,
    near: f64,
    hi: f64,
    lo: f64,
    stats: &mut SolveStats,
) -> Result<Option<f64>, SpectralError> {
    // Expand a bracket around the located root at the smaller cutoff.
    let mut w = 1e-7 * (1.0 + near.abs());
    for _ in 0..20 {
        let l0 = (near - w).max(lo);
        let l1 = (near + w).min(hi);
        let (m0, _) = miss_lp(prob, l0, theta, anchor, dirichlet_truncation, stats)?;
        let (m1, _) = miss_lp(prob, l1, theta, anchor, dirichlet_truncation, stats)?;
        if (m0 > 0.0) != (m1 > 0.0) {
            let (l, _) = bisect_miss(
                prob,
                theta,
                anchor,
                dirichlet_truncation,
                (l0, m0),
                (l1, m1),
                stats,
            )?;
            return Ok(Some(l));
        }
        w *= 4.0;
        if l0 == lo && l1 == hi {
            break;
        }
    }
    Ok(None)
}

fn eigenvalues_regular(
    prob: &SLProblem,
    theta: Option<f64>,
    window: (f64, f64),
    max_count: usize,
    stats: &mut SolveStats,
) -> Result<Spectrum, SpectralError> {
    let m = prob.m.value().ok_or_else(|| {
        SpectralError::UnsupportedCase("regular shooting needs a finite endpoint".into())
    })?;
    let theta_a = prufer_theta_a(theta).max(1e-12);
    let pi = std::f64::consts::PI;
    let theta_end = |l: f64, stats: &mut SolveStats| -> Result<f64, SpectralError> {
        stats.miss_evals += 1;
        Ok(prufer_integrate(prob, l, prob.a, m, theta_a, 1e-10)?.theta_end)
    };
    let t_lo = theta_end(window.0, stats)?;
    let t_hi = theta_end(window.1, stats)?;
    // Eigenvalue j (global index) satisfies theta(m; lambda) = j pi.
    let j_min = (t_lo / pi).floor().max(0.0) as usize + 1;
    let mut eigenvalues = Vec::new();
    for j in j_min.. {
        if eigenvalues.len() >= max_count || (j as f64) * pi > t_hi {
            break;
        }
        let target = (j as f64) * pi;
        let (mut lo, mut hi) = (window.0, window.1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (hi - lo).abs() < 1e-10 * (1.0 + mid.abs()) {
                break;
            }
            stats.bisection_steps += 1;
            if theta_end(mid, stats)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        let residual = (theta_end(lambda, stats)? - target).abs();
        eigenvalues.push(Eigen {
            n: j,
            lambda: Cx::new(lambda, 0.0),
            residual,
            drift: 0.0,
            converged: true,
            in_sector: None,
        });
    }
    let spectrum = Spectrum {
        eigenvalues,
        window: Window::Real(window.0, window.1),
        essential_floor: None,
        stats: *stats,
    };
    if spectrum.eigenvalues.len() < max_count {
        return Err(SpectralError::WindowExhausted {
            spectrum: Box::new(spectrum),
            requested: max_count,
        });
    }
    Ok(spectrum)
}

/// Forward fundamental system of tau v = lambda v on [a, X].
fn fundamental_at(
    prob: &SLProblem,
    lambda: f64,
) -> Result<(LinComb<f64>, LinComb<f64>), SpectralError> {
    let big_x = prob.truncation.last();
    let opts = IntOpts::with_tol(1e-11);
    let make = |u0: f64, pu0: f64| -> Result<LinComb<f64>, SpectralError> {
        let traj = integrate(
            prob,
            lambda,
            false,
            QuasiState::new(prob.a, u0, pu0),
            big_x,
            &opts,
        )?;
        Ok(LinComb::single(Calibrated::plain(traj)))
    };
    Ok((make(1.0, 0.0)?, make(0.0, 1.0)?))
}

/// Condition matrix M(lambda) for a bracket family: rows are the
/// boundary conditions applied to the fundamental system.
fn condition_matrix(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    scalar_ctx: Option<&ScalarCtx>,
    lambda: f64,
) -> Result<[[f64; 2]; 2], SpectralError> {
    let (v1, v2) = fundamental_at(prob, lambda)?;
    let mut m = [[0.0; 2]; 2];
    match (spec, scalar_ctx) {
        (ExtensionSpec::BracketMatrix(_), _) => {
            for (i, v) in [&v1, &v2].into_iter().enumerate() {
                let r = spec.bracket_residuals(prob, v)?;
                m[0][i] = r[0];
                m[1][i] = r[1];
            }
        }
        (ExtensionSpec::BracketScalar(d), Some(ctx)) => {
            for (i, v) in [&v1, &v2].into_iter().enumerate() {
                let wa = bracket(prob, v, &d.psi, &d.g, BracketAt::A)?;
                let wm = bracket(prob, v, &d.psi, &d.g, BracketAt::M)?;
                let c = ctx.coefficients(prob, v)?;
                // Condition 1: [v, psi]_a^m = beta c_psi ||psi||^2;
                // condition 2: no kernel component transverse to psi
                // (the complement carries the Friedrichs condition).
                m[0][i] = (wm - wa) - d.beta * c[0] * d.norm_sq;
                m[1][i] = c[1];
            }
        }
        _ => {
            return Err(SpectralError::UnsupportedCase(
                "eigenvalues_bracket handles BracketScalar/BracketMatrix specs".into(),
            ))
        }
    }
    Ok(m)
}

/// Endpoint system for expressing a solution in the kernel basis
/// {psi, phi} of a scalar bracket family.
struct ScalarCtx {
    psi: LinComb<f64>,
    phi: LinComb<f64>,
    g: LinComb<f64>,
    e: [[f64; 2]; 2],
}

impl ScalarCtx {
    fn build(
        prob: &SLProblem,
        d: &crate::extensions::BracketScalarData,
    ) -> Result<ScalarCtx, SpectralError> {
        let basis = kernel_basis(prob)?;
        let k = match basis {
            KernelBasis::SelfAdjoint(k) if k.dim == 2 => k,
            _ => {
                return Err(SpectralError::UnsupportedCase(
                    "scalar bracket family needs a dim-2 kernel".into(),
                ))
            }
        };
        // Complement direction: the kernel element orthogonal to psi.
        let ortho = k.ortho.expect("dim-2 kernel carries ortho pair");
        let wa0 = bracket(prob, &ortho[0], &d.psi, &d.g, BracketAt::A)?;
        let wa1 = bracket(prob, &ortho[1], &d.psi, &d.g, BracketAt::A)?;
        // Pick the combination with zero Wronskian against psi as the
        // "same direction" and build phi from the other one.
        let phi = if wa0.abs() > wa1.abs() {
            ortho[0].clone()
        } else {
            ortho[1].clone()
        };
        let ratio = |v: &LinComb<f64>, x: f64| -> f64 {
            let (lv, sv) = v.log_abs_u(x);
            let (lg, sg) = d.g.log_abs_u(x);
            sv * sg * (lv - lg).exp()
        };
        let lim = |v: &LinComb<f64>| -> Result<f64, SpectralError> {
            let vals: Vec<f64> = prob
                .truncation
                .cutoffs
                .iter()
                .map(|&c| ratio(v, c))
                .collect();
            Ok(limit_along_cutoffs(&vals, prob.truncation.tol.max(1e-9))?.0)
        };
        let e = [
            [ratio(&d.psi, prob.a), ratio(&phi, prob.a)],
            [lim(&d.psi)?, lim(&phi)?],
        ];
        let (smax, smin) = singular_values_2x2(&e);
        if smin < 1e-12 * smax {
            return Err(SpectralError::NonConvergent(
                "kernel endpoint system is singular".into(),
            ));
        }
        Ok(ScalarCtx {
            psi: d.psi.clone(),
            phi,
            g: d.g.clone(),
            e,
        })
    }

    fn coefficients(&self, prob: &SLProblem, v: &LinComb<f64>) -> Result<[f64; 2], SpectralError> {
        let _ = &self.psi;
        let _ = &self.phi;
        let ratio = |x: f64| -> f64 {
            let (lv, sv) = v.log_abs_u(x);
            let (lg, sg) = self.g.log_abs_u(x);
            sv * sg * (lv - lg).exp()
        };
        let rhs0 = ratio(prob.a);
        let vals: Vec<f64> = prob
            .truncation
            .cutoffs
            .iter()
            .map(|&c| ratio(c))
            .collect();
        let rhs1 = limit_along_cutoffs(&vals, prob.truncation.tol.max(1e-9))?.0;
        let e = &self.e;
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        Ok([
            (rhs0 * e[1][1] - rhs1 * e[0][1]) / det,
            (rhs1 * e[0][0] - rhs0 * e[1][0]) / det,
        ])
    }
}

fn det_normalized(m: &[[f64; 2]; 2]) -> f64 {
    // Row-normalize (positive factors) so the sign scan is well scaled.
    let r0 = (m[0][0].powi(2) + m[0][1].powi(2)).sqrt().max(1e-300);
    let r1 = (m[1][0].powi(2) + m[1][1].powi(2)).sqrt().max(1e-300);
    (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / (r0 * r1)
}

/// Spectrum of a bracket (limit-circle / regular) family as the roots
/// of det M(lambda); multiplicity at 0 by the rank of M(0).
pub fn eigenvalues_bracket(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    window: (f64, f64),
    max_count: usize,
    grid: usize,
) -> Result<Spectrum, SpectralError> {
    let scalar_ctx = match spec {
        ExtensionSpec::BracketScalar(d) => Some(ScalarCtx::build(prob, d)?),
        ExtensionSpec::BracketMatrix(_) => None,
        _ => {
            return Err(SpectralError::UnsupportedCase(
                "eigenvalues_bracket handles BracketScalar/BracketMatrix specs".into(),
            ))
        }
    };
    let mut stats = SolveStats::default();
    let det_at = |l: f64, stats: &mut SolveStats| -> Result<f64, SpectralError> {
        stats.miss_evals += 1;
        Ok(det_normalized(&condition_matrix(
            prob,
            spec,
            scalar_ctx.as_ref(),
            l,
        )?))
    };
    let mut eigenvalues: Vec<Eigen> = Vec::new();
    // Multiplicity at lambda = 0 by rank deficiency of M(0).
    let mut skip_near_zero = None;
    if window.0 <= 0.0 && window.1 >= 0.0 {
        let m0 = condition_matrix(prob, spec, scalar_ctx.as_ref(), 0.0)?;
        let (smax, smin) = singular_values_2x2(&m0);
        let mult = if smax < 1e-8 {
            2
        } else if smin < 1e-8 * smax {
            1
        } else {
            0
        };
        if mult > 0 {
            for _ in 0..mult {
                eigenvalues.push(Eigen {
                    n: 0,
                    lambda: Cx::new(0.0, 0.0),
                    residual: if mult == 2 { smax } else { smin / smax },
                    drift: 0.0,
                    converged: true,
                    in_sector: None,
                });
            }
            skip_near_zero = Some((window.1 - window.0) / grid as f64);
        }
    }
    let grid_pts: Vec<f64> = (0..=grid)
        .map(|i| window.0 + (window.1 - window.0) * (i as f64) / (grid as f64))
        .collect();
    let mut dets = Vec::with_capacity(grid_pts.len());
    for &l in &grid_pts {
        dets.push((l, det_at(l, &mut stats)?));
    }
    for i in 0..dets.len() - 1 {
        if eigenvalues.len() >= max_count {
            break;
        }
        let (mut a, mut b) = (dets[i], dets[i + 1]);
        if let Some(delta) = skip_near_zero {
            if a.0.abs() < delta || b.0.abs() < delta {
                continue;
            }
        }
        if (a.1 > 0.0) == (b.1 > 0.0) || a.1 == 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a.0 + b.0);
            if (b.0 - a.0).abs() < 1e-10 * (1.0 + mid.abs()) {
                break;
            }
            stats.bisection_steps += 1;
            let d = det_at(mid, &mut stats)?;
            if (d > 0.0) == (a.1 > 0.0) {
                a = (mid, d);
            } else {
                b = (mid, d);
            }
        }
        let lambda = 0.5 * (a.0 + b.0);
        eigenvalues.push(Eigen {
            n: 0,
            lambda: Cx::new(lambda, 0.0),
            residual: det_at(lambda, &mut stats)?.abs(),
            drift: 0.0,
            converged: true,
            in_sector: None,
        });
    }
    eigenvalues.sort_by(|x, y| x.lambda.re.partial_cmp(&y.lambda.re).unwrap());
    for (i, e) in eigenvalues.iter_mut().enumerate() {
        e.n = i + 1;
    }
    let spectrum = Spectrum {
        eigenvalues,
        window: Window::Real(window.0, window.1),
        essential_floor: None,
        stats,
    };
    if spectrum.eigenvalues.len() < max_count {
        return Err(SpectralError::WindowExhausted {
            spectrum: Box::new(spectrum),
            requested: max_count,
        });
    }
    Ok(spectrum)
}

/// Analytic miss function for sectorial extensions. Regular problems
/// shoot forward from the boundary condition at a and read off the
/// Dirichlet defect at m; singular ones apply the condition at a to
/// the backward subdominant solution.
struct SectorialMiss<'a> {
    prob: &'a SLProblem,
    theta: Option<Cx>,
    regular: bool,
    anchor: f64,
    /// Reference log-scale so values stay continuous (and finite)
    /// across renormalization-count changes.
    ls_ref: f64,
    /// Kernel of the adjoint expression, present for the Krein
    /// extension whose action is tau(v - v(a) psi). For that family
    /// the eigenvector at lambda is v = psi + w with w the zero-data
    /// solution of tau w = lambda (w + psi); v stays square-integrable
    /// exactly when the growing component of w vanishes, i.e.
    /// D(lambda) = lambda * int phi_sub(t; lambda) psi(t) k(t) dt = 0,
    /// with phi_sub the subdominant solution normalized to 1 at a.
    krein_psi: Option<&'a LinComb<Cx>>,
}

impl<'a> SectorialMiss<'a> {
    fn eval(&self, lambda: Cx, stats: &mut SolveStats) -> Result<(Cx, f64), SpectralError> {
        stats.miss_evals += 1;
        let opts = IntOpts::with_tol(1e-11);
        if let Some(psi) = self.krein_psi {
            let traj = integrate(
                self.prob,
                lambda,
                false,
                QuasiState::new(self.anchor, Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)),
                self.prob.a,
                &opts,
            )?;
            let sub = Calibrated::normalized_at(traj, self.prob.a, Cx::new(1.0, 0.0))
                .ok_or_else(|| {
                    SpectralError::NonConvergent(
                        "subdominant solution vanishes at the regular endpoint".into(),
                    )
                })?;
            let (integral, _err) = tail_integral::<Cx, _>(
                self.prob,
                |t| {
                    let k = self.prob.k_at(t)?;
                    Ok(sub.u(t) * psi.u(t) * k)
                },
                self.prob.a,
            )?;
            return Ok((lambda * integral, integral.norm().max(1e-300)));
        }
        if self.regular {
            let (u0, pu0) = match self.theta {
                Some(t) => (Cx::new(1.0, 0.0), t),
                None => (Cx::new(0.0, 0.0), Cx::new(1.0, 0.0)),
            };
            let traj = integrate(
                self.prob,
                lambda,
                false,
                QuasiState::new(self.prob.a, u0, pu0),
                self.anchor,
                &opts,
            )?;
            let (u, pu, ls) = traj.eval_scaled(self.anchor);
            let f = (ls - self.ls_ref).exp();
            Ok((u * f, (u.norm() + pu.norm()) * f))
        } else {
            let traj = integrate(
                self.prob,
                lambda,
                false,
                QuasiState::new(self.anchor, Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)),
                self.prob.a,
                &opts,
            )?;
            let (u, pu, ls) = traj.eval_scaled(self.prob.a);
            let f = (ls - self.ls_ref).exp();
            let d = match self.theta {
                Some(t) => pu - t * u,
                None => u,
            };
            Ok((d * f, (u.norm() + pu.norm()) * f))
        }
    }
}

/// Winding of D around the rectangle boundary, with adaptive
/// subdivision until consecutive argument increments are below pi/2.
fn winding_number(
    miss: &SectorialMiss,
    re: (f64, f64),
    im: (f64, f64),
    stats: &mut SolveStats,
) -> Result<i64, SpectralError> {
    let corners = [
        Cx::new(re.0, im.0),
        Cx::new(re.1, im.0),
        Cx::new(re.1, im.1),
        Cx::new(re.0, im.1),
        Cx::new(re.0, im.0),
    ];
    let mut pts: Vec<Cx> = Vec::new();
    for w in corners.windows(2) {
        for i in 0..8 {
            pts.push(w[0] + (w[1] - w[0]) * (i as f64 / 8.0));
        }
    }
    pts.push(corners[0]);
    let mut vals: Vec<(Cx, Cx)> = Vec::with_capacity(pts.len());
    for &z in &pts {
        vals.push((z, miss.eval(z, stats)?.0));
    }
    // Refine segments whose argument increment is too large.
    for _ in 0..16 {
        let mut refined = Vec::with_capacity(vals.len() * 2);
        let mut changed = false;
        for i in 0..vals.len() - 1 {
            refined.push(vals[i]);
            let (z0, d0) = vals[i];
            let (z1, d1) = vals[i + 1];
            if d0.norm() == 0.0 || d1.norm() == 0.0 {
                return Err(SpectralError::NonConvergent(
                    "miss function vanishes on the search contour".into(),
                ));
            }
            let dphi = (d1 / d0).arg().abs();
            // Large magnitude jumps alias the phase on the principal
            // branch, so refine on those as well.
            let dmag = (d1.norm() / d0.norm()).ln().abs();
            if dphi > std::f64::consts::FRAC_PI_2 || dmag > 1.5 {
                let zm = (z0 + z1) * 0.5;
                refined.push((zm, miss.eval(zm, stats)?.0));
                changed = true;
            }
        }
        refined.push(*vals.last().unwrap());
        vals = refined;
        if !changed {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..vals.len() - 1 {
        total += (vals[i + 1].1 / vals[i].1).arg();
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
}

fn newton_polish(
    miss: &SectorialMiss,
    start: Cx,
    stats: &mut SolveStats,
) -> Result<(Cx, f64), SpectralError> {
    let mut z = start;
    for _ in 0..60 {
        let (d, scale) = miss.eval(z, stats)?;
        if d.norm() <= 1e-12 * scale.max(1e-300) {
            return Ok((z, d.norm() / scale.max(1e-300)));
        }
        let h = 1e-6 * (1.0 + z.norm());
        let (dp, _) = miss.eval(z + Cx::new(h, 0.0), stats)?;
        let (dm, _) = miss.eval(z - Cx::new(h, 0.0), stats)?;
        let deriv = (dp - dm) / (2.0 * h);
        if deriv.norm() == 0.0 {
            break;
        }
        let step = d / deriv;
        z -= step;
        if step.norm() < 1e-12 * (1.0 + z.norm()) {
            let (d, scale) = miss.eval(z, stats)?;
            return Ok((z, d.norm() / scale.max(1e-300)));
        }
    }
    Err(SpectralError::NonConvergent(
        "Newton polish did not converge".into(),
    ))
}

fn isolate_roots(
    miss: &SectorialMiss,
    re: (f64, f64),
    im: (f64, f64),
    out: &mut Vec<(Cx, f64)>,
    stats: &mut SolveStats,
    depth: usize,
) -> Result<(), SpectralError> {
    let w = winding_number(miss, re, im, stats)?;
    if w == 0 {
        return Ok(());
    }
    let size = (re.1 - re.0).max(im.1 - im.0);
    let exhausted = depth >= 24 || size < 1e-8;
    if w == 1 || exhausted {
        let center = Cx::new(0.5 * (re.0 + re.1), 0.5 * (im.0 + im.1));
        match newton_polish(miss, center, stats) {
            Ok((root, residual)) => {
                // Newton may escape to a neighboring root's basin;
                // accept only roots inside this cell, otherwise keep
                // subdividing so the start lands closer.
                let margin = 0.05 * size + 1e-9;
                let inside = root.re >= re.0 - margin
                    && root.re <= re.1 + margin
                    && root.im >= im.0 - margin
                    && root.im <= im.1 + margin;
                if inside || exhausted {
                    for _ in 0..w.max(1) {
                        out.push((root, residual));
                    }
                    return Ok(());
                }
            }
            Err(e) => {
                if exhausted {
                    return Err(e);
                }
            }
        }
    }
    // Split slightly off-center so roots on symmetric loci (e.g. a
    // constant-imaginary-part line) do not land on the cut.
    let rm = re.0 + 0.53 * (re.1 - re.0);
    let imm = im.0 + 0.53 * (im.1 - im.0);
    isolate_roots(miss, (re.0, rm), (im.0, imm), out, stats, depth + 1)?;
    isolate_roots(miss, (rm, re.1), (im.0, imm), out, stats, depth + 1)?;
    isolate_roots(miss, (re.0, rm), (imm, im.1), out, stats, depth + 1)?;
    isolate_roots(miss, (rm, re.1), (imm, im.1), out, stats, depth + 1)?;
    Ok(())
}

/// Complex spectrum of a sectorial extension inside a search rectangle.
pub fn eigenvalues_sectorial(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    re: (f64, f64),
    im: (f64, f64),
    max_count: usize,
    sector: Option<Sector>,
) -> Result<Spectrum, SpectralError> {
    let (theta, krein_psi) = match spec {
        ExtensionSpec::SectorialKrein(d) => (Some(d.theta), Some(&d.psi)),
        ExtensionSpec::SectorialArlinskii(d) => (Some(d.theta), None),
        ExtensionSpec::Friedrichs => (None, None),
        _ => {
            return Err(SpectralError::UnsupportedCase(
                "eigenvalues_sectorial handles sectorial/Friedrichs conditions".into(),
            ))
        }
    };
    let kind = classify_endpoint(prob, 0.0)?.kind;
    let regular = kind == EndpointKind::Regular;
    let anchor = if regular {
        prob.m.value().unwrap()
    } else {
        prob.truncation.last()
    };
    let mut stats = SolveStats::default();
    let mut miss = SectorialMiss {
        prob,
        theta,
        regular,
        anchor,
        ls_ref: 0.0,
        krein_psi: if regular { None } else { krein_psi },
    };
    let center = Cx::new(0.5 * (re.0 + re.1), 0.5 * (im.0 + im.1));
    // Calibrate the log-scale reference at the rectangle center.
    if miss.krein_psi.is_none() {
        let opts = IntOpts::with_tol(1e-11);
        let (from, to, u0) = if regular {
            (prob.a, anchor, (Cx::new(0.0, 0.0), Cx::new(1.0, 0.0)))
        } else {
            (anchor, prob.a, (Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)))
        };
        let traj = integrate(prob, center, false, QuasiState::new(from, u0.0, u0.1), to, &opts)?;
        let (_, _, ls) = traj.eval_scaled(to);
        miss.ls_ref = ls;
    }
    let winding = winding_number(&miss, re, im, &mut stats)?;
    let mut roots: Vec<(Cx, f64)> = Vec::new();
    if winding != 0 {
        isolate_roots(&miss, re, im, &mut roots, &mut stats, 0)?;
    }
    if roots.len() as i64 != winding {
        return Err(SpectralError::WindingMismatch {
            winding,
            found: roots.len(),
        });
    }
    roots.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .unwrap()
    });
    let eigenvalues: Vec<Eigen> = roots
        .into_iter()
        .take(max_count)
        .enumerate()
        .map(|(i, (lambda, residual))| Eigen {
            n: i + 1,
            lambda,
            residual,
            drift: 0.0,
            converged: true,
            in_sector: sector.map(|s| s.contains(lambda, 1e-6 * (1.0 + lambda.norm()))),
        })
        .collect();
    Ok(Spectrum {
        eigenvalues,
        window: Window::Rect { re, im },
        essential_floor: None,
        stats,
    })
}

/// Normalized eigenfunction of a real Robin/Dirichlet extension at a
/// located eigenvalue.
pub fn eigenfunction(
    prob: &SLProblem,
    spec: &ExtensionSpec,
    lambda: f64,
) -> Result<(LinComb<f64>, f64), SpectralError> {
    let theta = robin_theta_of(spec)?;
    let kind = classify_endpoint(prob, 0.0)?.kind;
    let opts = IntOpts::with_tol(1e-11);
    let (traj, residual) = if kind == EndpointKind::Regular {
        let m = prob.m.value().unwrap();
        let (u0, pu0) = match theta {
            Some(t) => (1.0, t),
            None => (0.0, 1.0),
        };
        let traj = integrate(prob, lambda, false, QuasiState::new(prob.a, u0, pu0), m, &opts)?;
        let (um, pum, _) = traj.eval_scaled(m);
        let r = um.abs() / (um.abs() + pum.abs()).max(1e-300);
        (traj, r)
    } else {
        let anchor = prob.truncation.last();
        let traj = integrate(
            prob,
            lambda,
            false,
            QuasiState::new(anchor, 1.0, 0.0),
            prob.a,
            &opts,
        )?;
        let (u, pu, _) = traj.eval_scaled(prob.a);
        let r = match theta {
            Some(t) => (pu - t * u).abs() / (u.abs() + pu.abs()).max(1e-300),
            None => u.abs() / (u.abs() + pu.abs()).max(1e-300),
        };
        (traj, r)
    };
    if residual > 1e-6 {
        return Err(SpectralError::NotAnEigenvalue { residual });
    }
    // Anchor the representation at a so interior values stay finite.
    let x0 = prob.a;
    let (u_a, pu_a, _) = traj.eval_scaled(x0);
    let cal = if u_a.abs() >= pu_a.abs() {
        Calibrated::normalized_at(traj, x0, u_a.signum()).unwrap()
    } else {
        Calibrated::plain(traj)
    };
    let mut fun = LinComb::single(cal);
    let norm = match improper_integral(
        prob,
        |x| {
            let (l, _) = fun.log_abs_u(x);
            Ok((2.0 * l).exp() * prob.k_at(x)?)
        },
        prob.a,
    )? {
        Verdict::Converges { value, .. } if value > 0.0 => value,
        other => {
            return Err(SpectralError::NonConvergent(format!(
                "eigenfunction norm: {other:?}"
            )))
        }
    };
    fun = fun.scaled(1.0 / norm.sqrt());
    // Fix the sign: positive just inside the interval.
    let probe = prob.a + 1e-3 * (prob.truncation.last() - prob.a);
    if fun.u(probe) < 0.0 {
        fun = fun.scaled(-1.0);
    }
    Ok((fun, residual))
}
