//! Batch experiment driver: JSON configuration, deterministic execution and
//! JSON/CSV reports.
//!
//! Exit status: 0 on success, 2 when the configuration or its inputs are
//! invalid (including unreadable files and unwritable outputs), 3 when a
//! computation diverges. Failures print a single JSON object on stderr:
//!
//! ```text
//! {"error":{"kind":"validation","message":"...","path":"f.json"},"exit_code":2}
//! ```

use crate::conjugate::{propagate_jacobi, scan_conjugate, ConjugateError, ConjugatePoint};
use crate::dynamics::{integrate, rescale_orbit, DynamicsError, PhaseState, Rescaled, StepPolicy};
use crate::hopf::{
    alpha_sweep, d_alpha, d_alpha_direct_mc, log_spaced, CutoffFunction, DiscriminantReport,
    HopfError, McReport, SweepReport, DEFAULT_POINTS_PER_FREQUENCY,
};
use crate::minimal_set::{
    estimate_fraction, find_witness, ShellError, ShellReport, ShellSpec, WitnessSearch,
};
use crate::potential::{FourierPotential, Gauge, PeriodicGrid, Potential};
use crate::VERSION;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const THREADS_ENV: &str = "NEWTONLAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Validation {
        message: String,
        path: Option<PathBuf>,
    },
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError::Validation {
            message: message.into(),
            path: None,
        }
    }

    fn at_path(path: &Path, message: impl Into<String>) -> Self {
        CliError::Validation {
            message: message.into(),
            path: Some(path.to_path_buf()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    /// Machine-readable error object for stderr.
    pub fn to_json(&self) -> String {
        let (kind, path) = match self {
            CliError::Validation { path, .. } => ("validation", path.as_ref()),
            CliError::Numerical(_) => ("numerical", None),
        };
        let mut error = serde_json::json!({ "kind": kind, "message": self.to_string() });
        if let Some(p) = path {
            error["path"] = serde_json::json!(p.display().to_string());
        }
        serde_json::json!({ "error": error, "exit_code": self.exit_code() }).to_string()
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Diverged { .. } => CliError::Numerical(e.to_string()),
            DynamicsError::InvalidParameter(_) => CliError::invalid(e.to_string()),
        }
    }
}

impl From<ConjugateError> for CliError {
    fn from(e: ConjugateError) -> Self {
        match e {
            ConjugateError::Dynamics(d) => d.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<HopfError> for CliError {
    fn from(e: HopfError) -> Self {
        CliError::invalid(e.to_string())
    }
}

impl From<ShellError> for CliError {
    fn from(e: ShellError) -> Self {
        CliError::invalid(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// One experiment. Every parameter is filled in after [`ExperimentConfig::resolve`],
/// so the serialized config is sufficient to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// JSON potential file; normalized after loading.
    pub potential: PathBuf,
    /// JSON report path; stdout when absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// CSV data path.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    ConjugateScan(ConjugateScanParams),
    EstimateM(EstimateMParams),
    DalphaSweep(DalphaSweepParams),
    VerifyCorrespondence(CorrespondenceParams),
    CrosscheckD(CrosscheckParams),
}

/// Which function of t is subtracted from u before the constant shift that
/// achieves 0 <= u <= M.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeChoice {
    /// Constant shift only.
    #[default]
    Constant,
    /// Also remove the modes depending on t alone, minimizing int u_t^2.
    MinTimeDerivative,
}

fn default_horizon() -> f64 {
    crate::minimal_set::DEFAULT_HORIZON
}
fn default_radius() -> f64 {
    1.0
}
fn default_ppf() -> usize {
    DEFAULT_POINTS_PER_FREQUENCY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateScanParams {
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub step: StepPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateMParams {
    pub r1: f64,
    pub r2: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub step: StepPolicy,
    /// Switches from fraction estimation to a witness search over the
    /// first `witness_budget` samples.
    #[serde(default)]
    pub witness_budget: Option<usize>,
}

/// Either explicit values or a range `lo:hi:logN` / `lo:hi:linN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    List(Vec<f64>),
    Range(String),
}

impl AlphaSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            AlphaSpec::List(v) => Ok(v.clone()),
            AlphaSpec::Range(s) => parse_alpha_range(s),
        }
    }
}

/// Parses `lo:hi:logN` (log-spaced) or `lo:hi:linN` (evenly spaced).
pub fn parse_alpha_range(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || {
        CliError::invalid(format!(
            "bad alpha range {s:?}, expected lo:hi:logN or lo:hi:linN"
        ))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, spacing] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let spacing = spacing.trim();
    let (log, count) = if let Some(c) = spacing.strip_prefix("log") {
        (true, c)
    } else if let Some(c) = spacing.strip_prefix("lin") {
        (false, c)
    } else {
        return Err(bad());
    };
    let count: usize = count.parse().map_err(|_| bad())?;
    if count == 0 || !(lo > 0.0 && hi >= lo) {
        return Err(bad());
    }
    if log {
        Ok(log_spaced(lo, hi, count))
    } else if count == 1 {
        Ok(vec![lo])
    } else {
        Ok((0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DalphaSweepParams {
    /// Phase-space dimension; defaults to the potential's.
    #[serde(default)]
    pub n: Option<usize>,
    /// Shell radius R entering the default support.
    #[serde(default = "default_radius")]
    pub r: f64,
    pub alphas: AlphaSpec,
    /// Cutoff support; defaults to (R^2/2 + M + 1, R^2/2 + M + 2).
    #[serde(default)]
    pub support: Option<(f64, f64)>,
    #[serde(default = "default_ppf")]
    pub points_per_frequency: usize,
    #[serde(default)]
    pub gauge: GaugeChoice,
}

fn default_eps() -> f64 {
    0.25
}
fn default_duration() -> f64 {
    1.0
}
fn default_fixed_step() -> f64 {
    1e-4
}
fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceParams {
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Initial state of the H_eps orbit; p0 defaults to (1, ..., 1).
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
    #[serde(default)]
    pub p0: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_fixed_step")]
    pub h_step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_samples() -> usize {
    1_000_000
}
fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosscheckParams {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_radius")]
    pub r: f64,
    pub alpha: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub support: Option<(f64, f64)>,
    #[serde(default = "default_ppf")]
    pub points_per_frequency: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    #[serde(default)]
    pub gauge: GaugeChoice,
}

/// Reads and normalizes a potential file.
pub fn load_potential(path: &Path) -> Result<FourierPotential, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::at_path(
            path,
            format!("cannot read potential file {}: {e}", path.display()),
        )
    })?;
    let pot: FourierPotential = serde_json::from_str(&text).map_err(|e| {
        CliError::at_path(
            path,
            format!("invalid potential file {}: {e}", path.display()),
        )
    })?;
    Ok(pot.normalize())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::at_path(path, format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::at_path(path, format!("invalid config {}: {e}", path.display())))
}

fn check_positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(format!(
            "{name} must be positive, got {x}"
        )))
    }
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() != n {
        return Err(CliError::invalid(format!(
            "{name} has {} components, potential dimension is {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::invalid(format!("{name} must be finite")));
    }
    Ok(())
}

fn resolve_n(n: &mut Option<usize>, pot: &FourierPotential) -> Result<usize, CliError> {
    let value = n.unwrap_or(pot.dim());
    if value < pot.dim() {
        return Err(CliError::invalid(format!(
            "n = {value} is below the potential dimension {}",
            pot.dim()
        )));
    }
    *n = Some(value);
    Ok(value)
}

fn resolve_cutoff(
    support: &mut Option<(f64, f64)>,
    r: f64,
    pot: &FourierPotential,
) -> Result<CutoffFunction, CliError> {
    check_positive("r", r)?;
    let m = pot.upper_bound().expect("potential normalized on load");
    let rho = match *support {
        Some((a, b)) => {
            let rho = CutoffFunction::make_bump(a, b)?;
            if a <= r * r / 2.0 + m {
                return Err(CliError::invalid(format!(
                    "cutoff support starts at {a}, must exceed R^2/2 + M = {}",
                    r * r / 2.0 + m
                )));
            }
            rho
        }
        None => CutoffFunction::default_for(r, m)?,
    };
    *support = Some(rho.support());
    Ok(rho)
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

impl ExperimentConfig {
    /// Fills defaults that depend on the potential and validates every
    /// parameter. Nothing is computed before this succeeds.
    pub fn resolve(&mut self, pot: &FourierPotential) -> Result<(), CliError> {
        let dim = pot.dim();
        match &mut self.experiment {
            Experiment::ConjugateScan(p) => {
                check_len("q0", &p.q0, dim)?;
                check_len("p0", &p.p0, dim)?;
                check_positive("horizon", p.horizon)?;
                p.step.validate()?;
            }
            Experiment::EstimateM(p) => {
                shell_spec(dim, p).validate()?;
                if p.witness_budget == Some(0) {
                    return Err(CliError::invalid("witness_budget must be at least 1"));
                }
            }
            Experiment::DalphaSweep(p) => {
                resolve_n(&mut p.n, pot)?;
                resolve_cutoff(&mut p.support, p.r, pot)?;
                let alphas = p.alphas.values()?;
                if alphas.is_empty() {
                    return Err(CliError::invalid("no alpha values"));
                }
                alphas.iter().try_for_each(|&a| check_alpha(a))?;
                p.alphas = AlphaSpec::List(alphas);
                if p.points_per_frequency < 4 {
                    return Err(CliError::invalid("points_per_frequency must be at least 4"));
                }
            }
            Experiment::VerifyCorrespondence(p) => {
                check_positive("eps", p.eps)?;
                check_positive("duration", p.duration)?;
                check_positive("h_step", p.h_step)?;
                check_positive("tolerance", p.tolerance)?;
                let q0 = p.q0.get_or_insert_with(|| vec![0.0; dim]);
                check_len("q0", q0, dim)?;
                let p0 = p.p0.get_or_insert_with(|| vec![1.0; dim]);
                check_len("p0", p0, dim)?;
            }
            Experiment::CrosscheckD(p) => {
                resolve_n(&mut p.n, pot)?;
                resolve_cutoff(&mut p.support, p.r, pot)?;
                check_alpha(p.alpha)?;
                check_positive("sigmas", p.sigmas)?;
                if p.samples < 2 {
                    return Err(CliError::invalid("samples must be at least 2"));
                }
                if p.points_per_frequency < 4 {
                    return Err(CliError::invalid("points_per_frequency must be at least 4"));
                }
            }
        }
        Ok(())
    }
}

fn shell_spec(dim: usize, p: &EstimateMParams) -> ShellSpec {
    ShellSpec::new(dim, p.r1, p.r2, p.samples, p.seed)
        .with_horizon(p.horizon)
        .with_step(p.step)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T> {
    pub schema_version: u32,
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub gauge: Option<Gauge>,
    pub result: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateScanResult {
    pub step: f64,
    pub conjugate_point: Option<ConjugatePoint>,
    pub minimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimateMResult {
    Fraction(ShellReport),
    Search(WitnessSearch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub support: (f64, f64),
    #[serde(flatten)]
    pub sweep: SweepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceResult {
    pub eps: f64,
    pub samples: usize,
    /// max |rescaled - direct| over all samples, q and p components.
    pub max_deviation: f64,
    /// Same after mapping the direct H_eps orbit back with 1/eps.
    pub inverse_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckResult {
    pub quadrature: DiscriminantReport,
    pub monte_carlo: McReport,
    /// |quadrature - MC| / MC standard error, per term.
    pub z_a: Option<f64>,
    pub z_b: Option<f64>,
    pub z_d: Option<f64>,
    pub pass_a: bool,
    pub pass_b: bool,
    pub pass_d: bool,
    pub pass: bool,
}

/// JSON report plus optional CSV body produced by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: String,
    pub csv: Option<String>,
}

fn render<T: Serialize>(config: &ExperimentConfig, pot: &FourierPotential, result: T) -> String {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        version: VERSION,
        config,
        gauge: pot.gauge(),
        result,
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn within(diff: f64, se: f64, quad_err: f64, sigmas: f64) -> (Option<f64>, bool) {
    let z = (se > 0.0).then(|| diff.abs() / se);
    (z, diff.abs() <= sigmas * se + quad_err)
}

/// Loads the potential, resolves and validates `config`, then runs the
/// experiment on the current rayon pool. Files are not written.
pub fn run(config: &ExperimentConfig) -> Result<(ExperimentConfig, RunOutput), CliError> {
    let pot = load_potential(&config.potential)?;
    let gauge = match &config.experiment {
        Experiment::DalphaSweep(p) => p.gauge,
        Experiment::CrosscheckD(p) => p.gauge,
        _ => GaugeChoice::Constant,
    };
    let pot = match gauge {
        GaugeChoice::Constant => pot,
        GaugeChoice::MinTimeDerivative => pot.without_time_modes().normalize(),
    };
    let mut config = config.clone();
    config.resolve(&pot)?;
    let want_csv = config.csv.is_some();
    let output = match &config.experiment {
        Experiment::ConjugateScan(p) => {
            let start = PhaseState::new(p.q0.clone(), p.p0.clone(), p.t0);
            let h = p.step.step_for(&start);
            let point = scan_conjugate(&pot, &start, p.horizon, h)?;
            let csv = if want_csv {
                let orbit = integrate(&pot, &start, p.horizon, h)?;
                let record = propagate_jacobi(&pot, &orbit)?;
                let mut buf = Vec::new();
                record.write_csv(&pot, &mut buf).expect("writing to memory");
                Some(String::from_utf8(buf).expect("csv is utf-8"))
            } else {
                None
            };
            let result = ConjugateScanResult {
                step: h,
                conjugate_point: point,
                minimal: point.is_none(),
            };
            RunOutput {
                report: render(&config, &pot, result),
                csv,
            }
        }
        Experiment::EstimateM(p) => {
            let spec = shell_spec(pot.dim(), p);
            let result = match p.witness_budget {
                Some(budget) => EstimateMResult::Search(find_witness(&pot, &spec, budget)?),
                None => EstimateMResult::Fraction(estimate_fraction(&pot, &spec)?),
            };
            let witnesses = match &result {
                EstimateMResult::Fraction(r) => r.witnesses.clone(),
                EstimateMResult::Search(s) => s.witness.iter().cloned().collect(),
            };
            let csv = want_csv.then(|| {
                let n = pot.dim();
                let mut s = String::from("index");
                (1..=n).for_each(|i| write!(s, ",q_{i}").unwrap());
                (1..=n).for_each(|i| write!(s, ",p_{i}").unwrap());
                s.push_str(",t0,conjugate_time,half_step_time,validated\n");
                for w in &witnesses {
                    write!(s, "{}", w.index).unwrap();
                    w.initial
                        .q
                        .iter()
                        .chain(&w.initial.p)
                        .for_each(|x| write!(s, ",{x}").unwrap());
                    writeln!(
                        s,
                        ",{},{},{},{}",
                        w.initial.t,
                        w.first_conjugate_time,
                        opt(w.half_step_time),
                        w.validated
                    )
                    .unwrap();
                }
                s
            });
            RunOutput {
                report: render(&config, &pot, result),
                csv,
            }
        }
        Experiment::DalphaSweep(p) => {
            let n = p.n.expect("resolved");
            let (a, b) = p.support.expect("resolved");
            let rho = CutoffFunction::make_bump(a, b)?;
            let alphas = p.alphas.values()?;
            let grid = PeriodicGrid::resolving(
                &pot.embedded(n).map_err(HopfError::from)?.bandwidth(),
                p.points_per_frequency,
            );
            let sweep = alpha_sweep(&pot, &rho, n, &alphas, &grid)?;
            let csv = want_csv.then(|| {
                let mut s = String::from("alpha,A_exact,B_exact,D_alpha,A_bound,B_bound,D_bound\n");
                for r in &sweep.reports {
                    writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        r.alpha,
                        r.a_exact,
                        r.b_exact,
                        r.d_alpha,
                        opt(r.a_bound),
                        opt(r.b_bound),
                        opt(r.d_bound)
                    )
                    .unwrap();
                }
                s
            });
            let result = SweepResult {
                n,
                support: (a, b),
                sweep,
            };
            RunOutput {
                report: render(&config, &pot, result),
                csv,
            }
        }
        Experiment::VerifyCorrespondence(p) => {
            let q0 = p.q0.clone().expect("resolved");
            let p0 = p.p0.clone().expect("resolved");
            let scaled = Rescaled::new(&pot, p.eps);
            // orbit of H_eps from (q0, p0, t0) over `duration` at step h, and
            // the matching orbit of H from (q0, p0 / eps, eps t0)
            let start_eps = PhaseState::new(q0.clone(), p0.clone(), p.t0);
            let start = PhaseState::new(q0, p0.iter().map(|x| x / p.eps).collect(), p.eps * p.t0);
            let direct = integrate(&scaled, &start_eps, p.duration, p.h_step)?;
            let base = integrate(&pot, &start, p.eps * p.duration, p.eps * p.h_step)?;
            let mapped = rescale_orbit(&base, p.eps)?;
            let back = rescale_orbit(&direct, 1.0 / p.eps)?;
            let max_deviation = mapped.max_deviation(&direct);
            let inverse_deviation = back.max_deviation(&base) * p.eps;
            let csv = want_csv.then(|| {
                let mut s = String::from("t,deviation\n");
                for (a, b) in mapped.states.iter().zip(&direct.states) {
                    let d =
                        a.q.iter()
                            .zip(&b.q)
                            .chain(a.p.iter().zip(&b.p))
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0, f64::max);
                    writeln!(s, "{},{}", b.t, d).unwrap();
                }
                s
            });
            let result = CorrespondenceResult {
                eps: p.eps,
                samples: direct.len(),
                max_deviation,
                inverse_deviation,
                pass: max_deviation < p.tolerance,
            };
            RunOutput {
                report: render(&config, &pot, result),
                csv,
            }
        }
        Experiment::CrosscheckD(p) => {
            let n = p.n.expect("resolved");
            let (a, b) = p.support.expect("resolved");
            let rho = CutoffFunction::make_bump(a, b)?;
            let grid = PeriodicGrid::resolving(
                &pot.embedded(n).map_err(HopfError::from)?.bandwidth(),
                p.points_per_frequency,
            );
            let quad = d_alpha(&pot, &rho, p.alpha, n, &grid)?;
            let mc = d_alpha_direct_mc(&pot, &rho, p.alpha, n, p.samples, p.seed)?;
            let (z_a, pass_a) = within(
                quad.a_exact - mc.a.estimate,
                mc.a.std_error,
                quad.a_error,
                p.sigmas,
            );
            let (z_b, pass_b) = within(
                quad.b_exact - mc.b.estimate,
                mc.b.std_error,
                quad.b_error,
                p.sigmas,
            );
            let (z_d, pass_d) = within(
                quad.d_alpha - mc.d.estimate,
                mc.d.std_error,
                quad.d_error,
                p.sigmas,
            );
            let csv = want_csv.then(|| {
                format!(
                    "term,quadrature,quadrature_error,mc_estimate,mc_std_error\nA,{},{},{},{}\nB,{},{},{},{}\nD,{},{},{},{}\n",
                    quad.a_exact, quad.a_error, mc.a.estimate, mc.a.std_error,
                    quad.b_exact, quad.b_error, mc.b.estimate, mc.b.std_error,
                    quad.d_alpha, quad.d_error, mc.d.estimate, mc.d.std_error,
                )
            });
            let result = CrosscheckResult {
                quadrature: quad,
                monte_carlo: mc,
                z_a,
                z_b,
                z_d,
                pass_a,
                pass_b,
                pass_d,
                pass: pass_a && pass_b && pass_d,
            };
            RunOutput {
                report: render(&config, &pot, result),
                csv,
            }
        }
    };
    Ok((config, output))
}

/// Runs `config` on a pool with `threads` workers (machine default when None).
pub fn run_with_threads(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<(ExperimentConfig, RunOutput), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::invalid("threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::invalid(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run(config))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body)
        .map_err(|e| CliError::at_path(path, format!("cannot write {}: {e}", path.display())))
}

/// Runs and writes outputs; the report goes to stdout without `out`.
pub fn execute(config: &ExperimentConfig, threads: Option<usize>) -> Result<(), CliError> {
    let (resolved, output) = run_with_threads(config, threads)?;
    match &resolved.out {
        Some(path) => write_file(path, &output.report)?,
        None => {
            use std::io::Write;
            // a closed pipe on the reader side is not an error of the run
            let _ = std::io::stdout().lock().write_all(output.report.as_bytes());
        }
    }
    if let (Some(path), Some(body)) = (&resolved.csv, &output.csv) {
        write_file(path, body)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "newtonlab",
    version,
    about = "Numerical laboratory for time-periodic Newton equations on the torus"
)]
pub struct Cli {
    /// Worker threads; defaults to the machine parallelism.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub potential: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StepArgs {
    /// Integration step at |p| <= 1; scaled by 1/|p| above unless --fixed-step.
    #[arg(long, default_value_t = 1e-3)]
    pub h_step: f64,
    #[arg(long)]
    pub fixed_step: bool,
}

impl StepArgs {
    fn policy(&self) -> StepPolicy {
        if self.fixed_step {
            StepPolicy::Fixed { step: self.h_step }
        } else {
            StepPolicy::Scaled { base: self.h_step }
        }
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment described by a JSON config file.
    Run { config: PathBuf },
    /// First conjugate point along one orbit.
    ConjugateScan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated initial position.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        q0: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        p0: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = default_horizon())]
        horizon: f64,
        #[command(flatten)]
        step: StepArgs,
    },
    /// Fraction of a momentum shell free of conjugate points, or a witness search.
    EstimateM {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r1: f64,
        #[arg(long)]
        r2: f64,
        #[arg(long, default_value_t = default_horizon())]
        horizon: f64,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        witness_budget: Option<usize>,
        #[command(flatten)]
        step: StepArgs,
    },
    /// D_alpha over a range of stretch factors.
    DalphaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// lo:hi:logN, lo:hi:linN or a comma-separated list.
        #[arg(long, default_value = "1e-3:1e-1:log16")]
        alphas: String,
        #[arg(long, default_value_t = DEFAULT_POINTS_PER_FREQUENCY)]
        points_per_frequency: usize,
        #[arg(long, value_enum, default_value_t = GaugeChoice::Constant)]
        gauge: GaugeChoice,
    },
    /// Compare rescaled orbits of H with direct orbits of H_eps.
    VerifyCorrespondence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = default_eps())]
        eps: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        q0: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p0: Option<Vec<f64>>,
        #[arg(long, default_value_t = default_duration())]
        duration: f64,
        #[arg(long, default_value_t = default_fixed_step())]
        h_step: f64,
    },
    /// Reduced quadrature against direct Monte Carlo for one alpha.
    CrosscheckD {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = default_samples())]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = GaugeChoice::Constant)]
        gauge: GaugeChoice,
    },
}

fn alpha_spec(s: &str) -> Result<AlphaSpec, CliError> {
    if s.contains(':') {
        parse_alpha_range(s)?;
        Ok(AlphaSpec::Range(s.to_string()))
    } else {
        parse_vector(s)
            .map(AlphaSpec::List)
            .map_err(|e| CliError::invalid(format!("bad alpha list: {e}")))
    }
}

impl Command {
    pub fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let build = |common: Common, experiment| ExperimentConfig {
            potential: common.potential,
            out: common.out,
            csv: common.csv,
            experiment,
        };
        Ok(match self {
            Command::Run { config } => load_config(&config)?,
            Command::ConjugateScan {
                common,
                q0,
                p0,
                t0,
                horizon,
                step,
            } => build(
                common,
                Experiment::ConjugateScan(ConjugateScanParams {
                    q0,
                    p0,
                    t0,
                    horizon,
                    step: step.policy(),
                }),
            ),
            Command::EstimateM {
                common,
                r1,
                r2,
                horizon,
                samples,
                seed,
                witness_budget,
                step,
            } => build(
                common,
                Experiment::EstimateM(EstimateMParams {
                    r1,
                    r2,
                    horizon,
                    samples,
                    seed,
                    step: step.policy(),
                    witness_budget,
                }),
            ),
            Command::DalphaSweep {
                common,
                n,
                r,
                alphas,
                points_per_frequency,
                gauge,
            } => build(
                common,
                Experiment::DalphaSweep(DalphaSweepParams {
                    n,
                    r,
                    alphas: alpha_spec(&alphas)?,
                    support: None,
                    points_per_frequency,
                    gauge,
                }),
            ),
            Command::VerifyCorrespondence {
                common,
                eps,
                q0,
                p0,
                duration,
                h_step,
            } => build(
                common,
                Experiment::VerifyCorrespondence(CorrespondenceParams {
                    eps,
                    q0,
                    p0,
                    t0: 0.0,
                    duration,
                    h_step,
                    tolerance: default_tolerance(),
                }),
            ),
            Command::CrosscheckD {
                common,
                n,
                r,
                alpha,
                samples,
                seed,
                gauge,
            } => build(
                common,
                Experiment::CrosscheckD(CrosscheckParams {
                    n,
                    r,
                    alpha,
                    samples,
                    seed,
                    support: None,
                    points_per_frequency: DEFAULT_POINTS_PER_FREQUENCY,
                    sigmas: default_sigmas(),
                    gauge,
                }),
            ),
        })
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let err = CliError::invalid(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    let result = cli
        .command
        .into_config()
        .and_then(|config| execute(&config, cli.threads));
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
