//! Command-line front end: load a problem from a line-oriented config
//! file, run one of the classify/kernel/extend/spectrum/verify/sector
//! commands and emit a CSV or JSON report. Outputs are deterministic:
//! fixed grids, no wall-clock dependence, ordering by family parameter.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::classify::{classify_endpoint, EndpointKind, GaugeFunction};
use crate::expr::Expression;
use crate::extensions::{
    kernel_basis, lc_matrix_family, lc_scalar_family, lp_family, sectorial_arlinskii,
    sectorial_krein, CxOrInf, ExtError, ExtensionSpec, KernelBasis, MatOrInf, ParamOrInf,
};
use crate::forms::{rayleigh_check, sector_check, Sector, TrialFunction};
use crate::oracle::{discretize, eigenvalues_discrete, DiscreteBc};
use crate::problem::{Endpoint, SLProblem, TruncationPolicy};
use crate::spectral::{
    eigenfunction, eigenvalues_bracket, eigenvalues_real, eigenvalues_sectorial, Cx, RealOpts,
    SpectralError, Spectrum,
};

/// Process exit codes: 0 success, 1 validation error, 2 numerical
/// non-convergence, 3 invariant-suite failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergent(String),
    #[error("{0}")]
    InvariantFailure(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::NonConvergent(_) => 2,
            CliError::InvariantFailure(_) => 3,
        }
    }
}

fn ext_err(e: ExtError) -> CliError {
    match e {
        ExtError::NonConvergent(m) => CliError::NonConvergent(m),
        other => CliError::Validation(other.to_string()),
    }
}

fn spectral_err(e: SpectralError) -> CliError {
    match e {
        SpectralError::NonConvergent(m) => CliError::NonConvergent(m),
        SpectralError::TruncationUnconverged { .. } | SpectralError::WindingMismatch { .. } => {
            CliError::NonConvergent(e.to_string())
        }
        other => CliError::Validation(other.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "krein-lab", version, about = "Positive and m-sectorial extensions of singular Sturm-Liouville operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Report destination (defaults to the config's output.path, then
    /// standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads for parameter sweeps (fallback:
    /// KREIN_LAB_THREADS, then 1).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Classify the singular endpoint (regular/limit-point/limit-circle).
    Classify(CommonArgs),
    /// Compute the kernel basis of the maximal operator.
    Kernel(CommonArgs),
    /// Resolve the configured extension family to boundary data.
    Extend(CommonArgs),
    /// Eigenvalue sweep over the configured family parameters.
    Spectrum(CommonArgs),
    /// Run the invariant suite on the configured problem.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Cross-check eigenvalues against the finite-difference oracle.
        #[arg(long)]
        oracle: bool,
    },
    /// Check sector containment of coefficients and numerical range.
    Sector(CommonArgs),
}

/// Parsed and resolved run configuration.
pub struct RunConfig {
    pub raw: BTreeMap<String, BTreeMap<String, String>>,
    pub prob: SLProblem,
}

impl RunConfig {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.raw.get(section).and_then(|s| s.get(key)).map(|v| v.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.get(section, key).ok_or_else(|| {
            CliError::Validation(format!("missing key `{key}` in section [{section}]"))
        })
    }

    fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| {
                CliError::Validation(format!("key `{key}` in [{section}] is not a number: {v}"))
            }),
        }
    }

    fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse::<usize>().map_err(|_| {
                CliError::Validation(format!("key `{key}` in [{section}] is not a count: {v}"))
            }),
        }
    }

    fn get_list(&self, section: &str, key: &str) -> Result<Option<Vec<ParamOrInf>>, CliError> {
        let Some(v) = self.get(section, key) else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for part in v.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            if part == "inf" {
                out.push(ParamOrInf::Infinite);
            } else {
                out.push(ParamOrInf::Finite(part.parse::<f64>().map_err(|_| {
                    CliError::Validation(format!(
                        "entry `{part}` of `{key}` in [{section}] is not a number or \"inf\""
                    ))
                })?));
            }
        }
        if out.is_empty() {
            return Err(CliError::Validation(format!(
                "list `{key}` in [{section}] is empty"
            )));
        }
        Ok(Some(out))
    }

    /// The resolved configuration as a JSON object, embedded in every
    /// JSON report for provenance.
    fn provenance(&self) -> Value {
        let mut sections = Map::new();
        for (name, body) in &self.raw {
            let mut sec = Map::new();
            for (k, v) in body {
                sec.insert(k.clone(), Value::String(v.clone()));
            }
            sections.insert(name.clone(), Value::Object(sec));
        }
        Value::Object(sections)
    }
}

fn parse_expr(s: &str, what: &str) -> Result<Expression, CliError> {
    Expression::parse(s)
        .map_err(|e| CliError::Validation(format!("invalid expression for {what}: {e}")))
}

/// Parse the line-oriented config format: `[section]` headers,
/// `key = value` pairs, `#` comments; values may be double-quoted.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut raw: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            raw.entry(section.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        if section.is_empty() {
            return Err(CliError::Validation(format!(
                "line {}: key `{}` appears before any [section]",
                lineno + 1,
                key.trim()
            )));
        }
        let mut value = value.trim().to_string();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = value[1..value.len() - 1].to_string();
        }
        raw.get_mut(&section)
            .unwrap()
            .insert(key.trim().to_string(), value);
    }

    let get = |key: &str| -> Result<&str, CliError> {
        raw.get("problem")
            .and_then(|s| s.get(key))
            .map(|v| v.as_str())
            .ok_or_else(|| CliError::Validation(format!("missing key `{key}` in section [problem]")))
    };
    let a: f64 = get("a")?
        .parse()
        .map_err(|_| CliError::Validation("key `a` in [problem] is not a number".into()))?;
    let m = match get("m")? {
        "inf" => Endpoint::Infinite,
        v => Endpoint::Finite(v.parse::<f64>().map_err(|_| {
            CliError::Validation("key `m` in [problem] must be a number or \"inf\"".into())
        })?),
    };
    let k = parse_expr(get("k")?, "k")?;
    let p = parse_expr(get("p")?, "p")?;
    let q1 = parse_expr(get("q1")?, "q1")?;
    let q2 = match raw.get("problem").and_then(|s| s.get("q2")) {
        Some(v) => Some(parse_expr(v, "q2")?),
        None => None,
    };
    let mut prob = SLProblem::new(a, m, k, p, q1, q2);
    if let Some(cut) = raw.get("solver").and_then(|s| s.get("cutoffs")) {
        let mut cutoffs = Vec::new();
        for part in cut.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            cutoffs.push(part.parse::<f64>().map_err(|_| {
                CliError::Validation(format!("cutoff `{part}` is not a number"))
            })?);
        }
        if cutoffs.windows(2).any(|w| w[1] <= w[0]) || cutoffs.is_empty() {
            return Err(CliError::Validation(
                "cutoffs must be a nonempty increasing list".into(),
            ));
        }
        let tol = prob.truncation.tol;
        prob = prob.with_truncation(TruncationPolicy { cutoffs, tol });
    }
    Ok(RunConfig { raw, prob })
}

fn kind_str(kind: EndpointKind) -> &'static str {
    match kind {
        EndpointKind::Regular => "regular",
        EndpointKind::LimitPoint => "limit-point",
        EndpointKind::LimitCircle => "limit-circle",
    }
}

fn cx_json(z: Cx) -> Value {
    json!({ "re": z.re, "im": z.im })
}

/// Report payload plus its tabular (CSV) projection.
struct Report {
    json: Value,
    csv: String,
}

fn spectrum_rows(param: &str, spectrum: &Spectrum, rows: &mut String) {
    if spectrum.eigenvalues.is_empty() {
        rows.push_str(&format!("{param},0,,,,true\n"));
        return;
    }
    for e in &spectrum.eigenvalues {
        rows.push_str(&format!(
            "{param},{},{},{},{:e},{}\n",
            e.n, e.lambda.re, e.lambda.im, e.residual, e.converged
        ));
    }
}

fn spectrum_json(spectrum: &Spectrum) -> Value {
    json!({
        "essential_floor": spectrum.essential_floor,
        "eigenvalues": spectrum
            .eigenvalues
            .iter()
            .map(|e| json!({
                "n": e.n,
                "lambda": cx_json(e.lambda),
                "residual": e.residual,
                "converged": e.converged,
                "in_sector": e.in_sector,
            }))
            .collect::<Vec<_>>(),
    })
}

fn param_str(p: ParamOrInf) -> String {
    match p {
        ParamOrInf::Finite(v) => format!("{v}"),
        ParamOrInf::Infinite => "inf".into(),
    }
}

/// The extension family described by the [extension] section.
enum Family {
    Robin(Vec<ParamOrInf>),
    Friedrichs,
    BracketScalar(Vec<f64>),
    BracketMatrix(MatOrInf),
    SectorialKrein,
    Arlinskii { w: CxOrInf, y: Expression },
}

fn family_of(cfg: &RunConfig) -> Result<Family, CliError> {
    let variant = cfg.require("extension", "variant")?;
    match variant {
        "robin" => {
            let l = cfg.get_list("extension", "l")?.ok_or_else(|| {
                CliError::Validation("robin family needs an `l` list in [extension]".into())
            })?;
            Ok(Family::Robin(l))
        }
        "friedrichs" => Ok(Family::Friedrichs),
        "bracket_scalar" => {
            let betas = cfg.get_list("extension", "beta")?.ok_or_else(|| {
                CliError::Validation(
                    "bracket_scalar family needs a `beta` list in [extension]".into(),
                )
            })?;
            let betas = betas
                .into_iter()
                .map(|b| match b {
                    ParamOrInf::Finite(v) => Ok(v),
                    ParamOrInf::Infinite => Err(CliError::Validation(
                        "beta entries must be finite".into(),
                    )),
                })
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(Family::BracketScalar(betas))
        }
        "bracket_matrix" => {
            if cfg.get("extension", "B") == Some("inf") {
                return Ok(Family::BracketMatrix(MatOrInf::Infinite));
            }
            let mut b = [[0.0f64; 2]; 2];
            for (key, i, j) in [("b11", 0, 0), ("b12", 0, 1), ("b21", 1, 0), ("b22", 1, 1)] {
                b[i][j] = cfg.get_f64("extension", key)?.ok_or_else(|| {
                    CliError::Validation(format!(
                        "bracket_matrix family needs `{key}` in [extension]"
                    ))
                })?;
            }
            Ok(Family::BracketMatrix(MatOrInf::Finite(b)))
        }
        "sectorial_krein" => Ok(Family::SectorialKrein),
        "arlinskii" => {
            let w = match cfg.require("extension", "w")? {
                "inf" => CxOrInf::Infinite,
                v => {
                    let re = v.parse::<f64>().map_err(|_| {
                        CliError::Validation("key `w` must be a number or \"inf\"".into())
                    })?;
                    let im = cfg.get_f64("extension", "w_im")?.unwrap_or(0.0);
                    CxOrInf::Finite(Cx::new(re, im))
                }
            };
            let y = parse_expr(cfg.get("extension", "y").unwrap_or("0"), "y")?;
            Ok(Family::Arlinskii { w, y })
        }
        other => Err(CliError::Validation(format!(
            "unknown extension variant `{other}`"
        ))),
    }
}

fn real_window(cfg: &RunConfig) -> Result<(f64, f64), CliError> {
    let lo = cfg.get_f64("solver", "window_lo")?.unwrap_or(-1.0);
    let hi = cfg.get_f64("solver", "window_hi")?.unwrap_or(100.0);
    if !(hi > lo) {
        return Err(CliError::Validation("empty spectral window".into()));
    }
    Ok((lo, hi))
}

fn rect_window(cfg: &RunConfig) -> Result<((f64, f64), (f64, f64)), CliError> {
    let re = (
        cfg.get_f64("solver", "re_lo")?.unwrap_or(-1.0),
        cfg.get_f64("solver", "re_hi")?.unwrap_or(100.0),
    );
    let im = (
        cfg.get_f64("solver", "im_lo")?.unwrap_or(-10.0),
        cfg.get_f64("solver", "im_hi")?.unwrap_or(10.0),
    );
    if !(re.1 > re.0 && im.1 > im.0) {
        return Err(CliError::Validation("empty search rectangle".into()));
    }
    Ok((re, im))
}

fn sector_of(cfg: &RunConfig) -> Result<Option<Sector>, CliError> {
    let nu = cfg.get_f64("sector", "nu")?;
    let tan_alpha = cfg.get_f64("sector", "tan_alpha")?;
    match (nu, tan_alpha) {
        (None, None) => Ok(None),
        (Some(nu), Some(t)) => Sector::new(nu, t.atan())
            .map(Some)
            .map_err(|e| CliError::Validation(e.to_string())),
        _ => Err(CliError::Validation(
            "section [sector] needs both `nu` and `tan_alpha`".into(),
        )),
    }
}

fn gauge_of(cfg: &RunConfig) -> Result<GaugeFunction, CliError> {
    let h = cfg.get("gauge", "h").unwrap_or("1");
    Ok(GaugeFunction::from_expr(parse_expr(h, "h")?, &cfg.prob.p))
}

/// Run `f` over `0..n` on up to `threads` workers, preserving index
/// order in the returned vector.
fn ordered_sweep<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots_ref.lock().unwrap()[i] = Some(v);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

fn cmd_classify(cfg: &RunConfig) -> Result<Report, CliError> {
    let report = classify_endpoint(&cfg.prob, 0.0)
        .map_err(|e| CliError::NonConvergent(e.to_string()))?;
    let kind = kind_str(report.kind);
    let json = json!({
        "command": "classify",
        "config": cfg.provenance(),
        "kind": kind,
        "lambda0": report.lambda0,
        "k_integral": report.k_integral,
        "inv_p_integral": report.inv_p_integral,
        "q_integral": report.q_integral,
        "oscillation": report.oscillation,
        "confidence": format!("{:?}", report.confidence).to_lowercase(),
    });
    let csv = format!("key,value\nkind,{kind}\nlambda0,{}\n", report.lambda0);
    Ok(Report { json, csv })
}

fn cmd_kernel(cfg: &RunConfig) -> Result<Report, CliError> {
    let basis = kernel_basis(&cfg.prob).map_err(ext_err)?;
    let (mode, dim, ppsi_a, norm_sq, converged, drift) = match &basis {
        KernelBasis::SelfAdjoint(k) => (
            "self-adjoint",
            k.dim,
            Cx::new(k.ppsi_a, 0.0),
            k.norm_sq.map(|(v, _)| v),
            k.converged,
            k.drift,
        ),
        KernelBasis::Sectorial(k) => (
            "sectorial",
            k.dim,
            k.ppsi_a,
            k.norm_sq.map(|(v, _)| v),
            k.converged,
            k.drift,
        ),
    };
    let json = json!({
        "command": "kernel",
        "config": cfg.provenance(),
        "mode": mode,
        "dim": dim,
        "ppsi_a": cx_json(ppsi_a),
        "norm_sq": norm_sq,
        "converged": converged,
        "drift": drift,
    });
    let csv = format!(
        "mode,dim,re_ppsi_a,im_ppsi_a,norm_sq,converged,drift\n{mode},{dim},{},{},{},{converged},{:e}\n",
        ppsi_a.re,
        ppsi_a.im,
        norm_sq.map(|v| v.to_string()).unwrap_or_default(),
        drift
    );
    Ok(Report { json, csv })
}

fn resolve_one(
    prob: &SLProblem,
    basis: &KernelBasis,
    family: &Family,
    idx: usize,
) -> Result<(String, ExtensionSpec), CliError> {
    match family {
        Family::Robin(ls) => {
            let l = ls[idx];
            let spec = lp_family(prob, basis, l).map_err(ext_err)?;
            Ok((param_str(l), spec))
        }
        Family::Friedrichs => Ok(("inf".into(), ExtensionSpec::Friedrichs)),
        Family::BracketScalar(betas) => {
            let beta = betas[idx];
            let psi = match basis {
                KernelBasis::SelfAdjoint(k) => k.psi.clone(),
                KernelBasis::Sectorial(_) => {
                    return Err(CliError::Validation(
                        "bracket families need a self-adjoint problem".into(),
                    ))
                }
            };
            let spec = lc_scalar_family(prob, basis, &psi, beta).map_err(ext_err)?;
            Ok((format!("{beta}"), spec))
        }
        Family::BracketMatrix(b) => {
            let spec = lc_matrix_family(prob, basis, *b).map_err(ext_err)?;
            let p = match b {
                MatOrInf::Infinite => "inf".to_string(),
                MatOrInf::Finite(m) => format!("{};{};{};{}", m[0][0], m[0][1], m[1][0], m[1][1]),
            };
            Ok((p, spec))
        }
        Family::SectorialKrein => {
            let spec = sectorial_krein(prob, basis).map_err(ext_err)?;
            Ok(("krein".into(), spec))
        }
        Family::Arlinskii { w, y } => {
            let spec = sectorial_arlinskii(prob, basis, *w, y.clone()).map_err(ext_err)?;
            let p = match w {
                CxOrInf::Infinite => "inf".to_string(),
                CxOrInf::Finite(z) => format!("{}+{}i", z.re, z.im),
            };
            Ok((p, spec))
        }
    }
}

fn family_len(family: &Family) -> usize {
    match family {
        Family::Robin(ls) => ls.len(),
        Family::BracketScalar(bs) => bs.len(),
        _ => 1,
    }
}

fn cmd_extend(cfg: &RunConfig) -> Result<Report, CliError> {
    let basis = kernel_basis(&cfg.prob).map_err(ext_err)?;
    let family = family_of(cfg)?;
    let mut rows = String::from("family_param,variant,re_theta,im_theta\n");
    let mut items = Vec::new();
    for i in 0..family_len(&family) {
        let (param, spec) = resolve_one(&cfg.prob, &basis, &family, i)?;
        let variant = match &spec {
            ExtensionSpec::RobinLp(_) => "robin",
            ExtensionSpec::Krein(_) => "krein",
            ExtensionSpec::Friedrichs => "friedrichs",
            ExtensionSpec::BracketScalar(_) => "bracket_scalar",
            ExtensionSpec::BracketMatrix(_) => "bracket_matrix",
            ExtensionSpec::SectorialKrein(_) => "sectorial_krein",
            ExtensionSpec::SectorialArlinskii(_) => "arlinskii",
        };
        let theta = spec
            .sectorial_theta()
            .or_else(|| spec.robin_theta().map(|t| Cx::new(t, 0.0)));
        rows.push_str(&format!(
            "{param},{variant},{},{}\n",
            theta.map(|t| t.re.to_string()).unwrap_or_default(),
            theta.map(|t| t.im.to_string()).unwrap_or_default(),
        ));
        items.push(json!({
            "family_param": param,
            "variant": variant,
            "theta": theta.map(cx_json),
        }));
    }
    let json = json!({
        "command": "extend",
        "config": cfg.provenance(),
        "extensions": items,
    });
    Ok(Report { json, csv: rows })
}

fn solve_spectrum(
    cfg: &RunConfig,
    spec: &ExtensionSpec,
    count: usize,
) -> Result<Spectrum, CliError> {
    let prob = &cfg.prob;
    let opts = RealOpts {
        grid: cfg.get_usize("solver", "grid", RealOpts::default().grid)?,
        ..RealOpts::default()
    };
    let sectorial = prob.is_sectorial()
        || matches!(
            spec,
            ExtensionSpec::SectorialKrein(_) | ExtensionSpec::SectorialArlinskii(_)
        );
    let res = if sectorial {
        let (re, im) = rect_window(cfg)?;
        eigenvalues_sectorial(prob, spec, re, im, count, sector_of(cfg)?)
    } else if matches!(
        spec,
        ExtensionSpec::BracketScalar(_) | ExtensionSpec::BracketMatrix(_)
    ) {
        eigenvalues_bracket(prob, spec, real_window(cfg)?, count, opts.grid)
    } else {
        eigenvalues_real(prob, spec, real_window(cfg)?, count, &opts)
    };
    match res {
        Ok(s) => Ok(s),
        // A window with fewer eigenvalues than requested is data, not
        // an error: report what was found.
        Err(SpectralError::WindowExhausted { spectrum, .. }) => Ok(*spectrum),
        Err(e) => Err(spectral_err(e)),
    }
}

fn threads_of(args: &CommonArgs) -> usize {
    args.threads
        .or_else(|| {
            std::env::var("KREIN_LAB_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
}

fn cmd_spectrum(cfg: &RunConfig, threads: usize) -> Result<Report, CliError> {
    let basis = kernel_basis(&cfg.prob).map_err(ext_err)?;
    let family = family_of(cfg)?;
    let count = cfg.get_usize("solver", "count", 3)?;
    let n = family_len(&family);
    let results = ordered_sweep(n, threads, |i| {
        let (param, spec) = resolve_one(&cfg.prob, &basis, &family, i)?;
        let spectrum = solve_spectrum(cfg, &spec, count)?;
        Ok::<(String, Spectrum), CliError>((param, spectrum))
    });
    let mut rows = String::from("family_param,n,re_lambda,im_lambda,residual,converged\n");
    let mut items = Vec::new();
    for r in results {
        let (param, spectrum) = r?;
        spectrum_rows(&param, &spectrum, &mut rows);
        items.push(json!({
            "family_param": param,
            "spectrum": spectrum_json(&spectrum),
        }));
    }
    let json = json!({
        "command": "spectrum",
        "config": cfg.provenance(),
        "sweep": items,
    });
    Ok(Report { json, csv: rows })
}

fn cmd_sector(cfg: &RunConfig) -> Result<Report, CliError> {
    let sector = sector_of(cfg)?.ok_or_else(|| {
        CliError::Validation("sector command needs a [sector] section with nu and tan_alpha".into())
    })?;
    let h = gauge_of(cfg)?;
    let grid = cfg.get_usize("solver", "grid", 64)?;
    let report = sector_check(&cfg.prob, &h, sector, grid)
        .map_err(|e| CliError::NonConvergent(e.to_string()))?;
    let json = json!({
        "command": "sector",
        "config": cfg.provenance(),
        "nu": report.sector.nu,
        "alpha": report.sector.alpha,
        "pointwise_ok": report.pointwise_ok,
        "min_margin": report.min_margin,
        "numerical_range_samples": report.samples.iter().map(|&z| cx_json(z)).collect::<Vec<_>>(),
        "contained": report.contained,
    });
    let csv = format!(
        "nu,alpha,pointwise_ok,min_margin,contained\n{},{},{},{},{}\n",
        report.sector.nu, report.sector.alpha, report.pointwise_ok, report.min_margin,
        report.contained
    );
    Ok(Report { json, csv })
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn cmd_verify(cfg: &RunConfig, threads: usize, oracle: bool) -> Result<Report, CliError> {
    let prob = &cfg.prob;
    let mut checks: Vec<Check> = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        checks.push(Check {
            name,
            passed,
            detail,
        })
    };

    let report = classify_endpoint(prob, 0.0)
        .map_err(|e| CliError::NonConvergent(e.to_string()))?;
    push(
        "classification",
        true,
        format!("endpoint kind {}", kind_str(report.kind)),
    );
    let basis = kernel_basis(prob).map_err(ext_err)?;
    let kernel_ok = match &basis {
        KernelBasis::SelfAdjoint(k) => k.converged,
        KernelBasis::Sectorial(k) => k.converged,
    };
    push(
        "kernel-convergence",
        kernel_ok,
        format!("dim {}", basis.dim()),
    );

    if !prob.is_sectorial() {
        match &basis {
            KernelBasis::SelfAdjoint(k) if k.dim == 1 => {
                // Family monotonicity: lambda_1 nondecreasing in l.
                // Members near the essential floor converge slowly, so
                // the suite doubles the configured cutoffs twice.
                let mut deep = prob.truncation.clone();
                for _ in 0..2 {
                    deep.cutoffs.push(2.0 * deep.last() - prob.a);
                }
                let prob_deep = prob.clone().with_truncation(deep);
                let basis_deep = kernel_basis(&prob_deep).map_err(ext_err)?;
                let cfg_deep = RunConfig {
                    raw: cfg.raw.clone(),
                    prob: prob_deep,
                };
                let prob = &cfg_deep.prob;
                let basis = &basis_deep;
                let ls: Vec<ParamOrInf> = (0..8).map(|i| ParamOrInf::Finite(i as f64 * 0.25)).collect();
                let window = real_window(cfg)?;
                let bottoms = ordered_sweep(ls.len(), threads, |i| {
                    let spec = lp_family(prob, basis, ls[i]).map_err(ext_err)?;
                    let s = solve_spectrum(&cfg_deep, &spec, 1)?;
                    Ok::<Option<f64>, CliError>(s.eigenvalues.first().map(|e| e.lambda.re))
                });
                let mut vals = Vec::new();
                for b in bottoms {
                    vals.push(b?);
                }
                let mut mono = true;
                for w in vals.windows(2) {
                    if let (Some(x), Some(y)) = (w[0], w[1]) {
                        if y < x - 1e-8 {
                            mono = false;
                        }
                    }
                }
                push(
                    "family-monotonicity",
                    mono,
                    format!("lambda_1 over l in 0..1.75, window {:?}", window),
                );
                // Rayleigh consistency of the bottom Krein eigenfunction.
                let spec = lp_family(prob, basis, ParamOrInf::Finite(0.0)).map_err(ext_err)?;
                let s = solve_spectrum(&cfg_deep, &spec, 1)?;
                if let Some(e) = s.eigenvalues.first() {
                    let (sol, _) = eigenfunction(prob, &spec, e.lambda.re).map_err(spectral_err)?;
                    let trial = TrialFunction::from_solution(prob, sol);
                    let ray = rayleigh_check(prob, &spec, &trial)
                        .map_err(|er| CliError::NonConvergent(er.to_string()))?;
                    let rel = (ray.re - e.lambda.re).abs() / (1.0 + e.lambda.re.abs());
                    push(
                        "rayleigh-consistency",
                        rel < 1e-5,
                        format!("|R[u] - lambda| rel {rel:e}"),
                    );
                }
            }
            _ => {}
        }
        if oracle {
            // Finite-difference cross-check: Dirichlet bottom on a
            // regular interval, a truncated Robin member otherwise.
            let (spec, bc_a, x_end) = match prob.m {
                Endpoint::Finite(m) => (ExtensionSpec::Friedrichs, DiscreteBc::Dirichlet, m),
                Endpoint::Infinite => {
                    let spec =
                        lp_family(prob, &basis, ParamOrInf::Finite(1.0)).map_err(ext_err)?;
                    let theta = spec.robin_theta().ok_or_else(|| {
                        CliError::Validation("family member lacks a Robin angle".into())
                    })?;
                    (spec, DiscreteBc::Robin(theta), prob.truncation.last())
                }
            };
            let s = solve_spectrum(cfg, &spec, 1)?;
            if let Some(e) = s.eigenvalues.first() {
                let op = discretize(prob, x_end, 10_000, bc_a, DiscreteBc::Dirichlet)
                    .map_err(|er| CliError::Validation(er.to_string()))?;
                let d = eigenvalues_discrete(&op, 1)[0];
                let rel = (e.lambda.re - d).abs() / (1.0 + d.abs());
                push(
                    "oracle-cross-check",
                    rel < 1e-3,
                    format!("shooting {} vs discrete {d}, rel {rel:e}", e.lambda.re),
                );
            } else {
                push(
                    "oracle-cross-check",
                    false,
                    "no eigenvalue found in the configured window".into(),
                );
            }
        }
    } else {
        // Sectorial problems: eigenvalues stay inside the configured
        // sector when one is given.
        if let Some(sector) = sector_of(cfg)? {
            let basis_ref = &basis;
            let spec = sectorial_krein(prob, basis_ref).map_err(ext_err)?;
            let s = solve_spectrum(cfg, &spec, 3)?;
            let inside = s
                .eigenvalues
                .iter()
                .all(|e| e.in_sector != Some(false));
            push(
                "sector-containment",
                inside,
                format!("{} eigenvalue(s) checked", s.eigenvalues.len()),
            );
            let h = gauge_of(cfg)?;
            let rep = sector_check(prob, &h, sector, 64)
                .map_err(|e| CliError::NonConvergent(e.to_string()))?;
            push(
                "sector-coefficients",
                rep.pointwise_ok && rep.contained,
                format!("min margin {:e}", rep.min_margin),
            );
        }
    }

    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let mut rows = String::from("check,passed,detail\n");
    let mut items = Vec::new();
    for c in &checks {
        rows.push_str(&format!("{},{},{}\n", c.name, c.passed, c.detail));
        items.push(json!({ "check": c.name, "passed": c.passed, "detail": c.detail }));
    }
    let json = json!({
        "command": "verify",
        "config": cfg.provenance(),
        "checks": items,
        "passed": failed.is_empty(),
    });
    if !failed.is_empty() {
        // Emit the report before failing so the caller still sees it.
        return Err(CliError::InvariantFailure(format!(
            "{} invariant check(s) failed: {}\n{}",
            failed.len(),
            failed
                .iter()
                .map(|c| c.name)
                .collect::<Vec<_>>()
                .join(", "),
            rows
        )));
    }
    Ok(Report { json, csv: rows })
}

fn emit(report: &Report, args: &CommonArgs, cfg: &RunConfig, default_csv: bool) -> Result<(), CliError> {
    let format = args
        .format
        .clone()
        .or_else(|| cfg.get("output", "format").map(|s| s.to_string()))
        .unwrap_or_else(|| if default_csv { "csv".into() } else { "json".into() });
    let body = match format.as_str() {
        "csv" => report.csv.clone(),
        "json" => {
            let mut s = serde_json::to_string_pretty(&report.json)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            s.push('\n');
            s
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown format `{other}` (expected csv or json)"
            )))
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.get("output", "path").map(PathBuf::from));
    match out {
        Some(path) => fs::write(path, body)?,
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

/// Execute a parsed command line; the caller maps the error (if any)
/// to a process exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let (args, verify_oracle) = match &cli.command {
        Command::Classify(a)
        | Command::Kernel(a)
        | Command::Extend(a)
        | Command::Spectrum(a)
        | Command::Sector(a) => (a, None),
        Command::Verify { common, oracle } => (common, Some(*oracle)),
    };
    let text = fs::read_to_string(&args.config).map_err(|e| {
        CliError::Validation(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let cfg = parse_config(&text)?;
    let threads = threads_of(args);
    let (report, default_csv) = match &cli.command {
        Command::Classify(_) => (cmd_classify(&cfg)?, false),
        Command::Kernel(_) => (cmd_kernel(&cfg)?, false),
        Command::Extend(_) => (cmd_extend(&cfg)?, true),
        Command::Spectrum(_) => (cmd_spectrum(&cfg, threads)?, true),
        Command::Sector(_) => (cmd_sector(&cfg)?, false),
        Command::Verify { .. } => (cmd_verify(&cfg, threads, verify_oracle.unwrap())?, true),
    };
    emit(&report, args, &cfg, default_csv)?;
    Ok(())
}
