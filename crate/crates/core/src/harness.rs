//! Declarative experiment runner.
//!
//! A TOML config names one experiment kind, a law and parameter grids. The
//! runner validates every parameter combination up front, fans the tasks out
//! over a bounded worker pool and writes, into the output directory:
//!
//! * `results.csv`, one row per table entry, with stable columns led by
//!   `config_hash` and `task`;
//! * `results.json`, the same table with column units, plus check verdicts
//!   and task errors;
//! * `series/*.csv`, x/y plot series;
//! * `manifest.json`, with the config hash, versions, wall time and the
//!   sha256 of every artifact.
//!
//! Everything except the manifest is a function of the config (seed
//! included), so two runs produce byte-identical CSV files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian_field::{eisenbaum_check, norm_concentration_check, TestFunctional};
use crate::torus_fourier::{TorusGrid, MAX_TORUS_SITES};
use crate::variational::{
    check_subcritical, compute_constants, conjugate, convergence_scan_discrete_to_periodic, dual_side_limit,
    legendre_consistency, rho_power_law, solve_discrete_rho, solve_dual_rho1, solve_whole_space,
    tilted_principal_eigenvalue, ConstantsRegistry, Profile, SolveOptions, WholeSpace,
};
use crate::walk_kernel::{green_origin_scan, scan_side, GreenKernel, GrowthClass, IncrementLaw, LawSpec};
use crate::walk_simulator::{exp_moment_curve, replica_seed, typical_scaling_fit, BetaSchedule, ScalingClass};

/// Longest walk horizon accepted; local-time maps grow linearly in `t`.
pub const MAX_HORIZON: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub law: Option<LawSpec>,
    pub experiment: Experiment,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "unit")]
    pub scale: f64,
    /// Replaces the default of a named check before scaling.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            scale: 1.0,
            overrides: BTreeMap::new(),
        }
    }
}

impl Tolerances {
    pub fn get(&self, name: &str, default: f64) -> f64 {
        self.overrides.get(name).copied().unwrap_or(default) * self.scale
    }
}

fn unit() -> f64 {
    1.0
}

fn default_box() -> f64 {
    16.0
}

fn default_resolution() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// `G(0,0)` on the torus of side `R beta` with killing `a beta^{-alpha}`.
    GreenScan { r: f64, a: f64, betas: Vec<f64> },
    TypicalScaling { p: f64, horizons: Vec<f64>, replicas: usize },
    ExpMoment {
        p: f64,
        thetas: Vec<f64>,
        horizons: Vec<f64>,
        beta: BetaSchedule,
        replicas: usize,
        /// Whole-space constant in the law's normalization; solved for when absent.
        #[serde(default)]
        rho: Option<f64>,
    },
    /// Cartesian product of sides, killing rates and shifts.
    Eisenbaum {
        sides: Vec<usize>,
        lambdas: Vec<f64>,
        shifts: Vec<f64>,
        functionals: Vec<String>,
        replicas: usize,
    },
    Concentration { side: usize, lambda: f64, p: f64, replicas: usize },
    RhoDiscrete { p: f64, a: f64, r: f64, betas: Vec<f64> },
    RhoConvergence {
        p: f64,
        a: f64,
        r: f64,
        betas: Vec<f64>,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    Constants {
        dim: usize,
        alphas: Vec<f64>,
        p: f64,
        #[serde(default = "unit")]
        sigma: f64,
        #[serde(default = "default_box")]
        box_len: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
        /// Killing rates for the power-law fit of `rho(a)`.
        #[serde(default)]
        a_values: Vec<f64>,
    },
    Legendre {
        dim: usize,
        alpha: f64,
        p: f64,
        xs: Vec<f64>,
        #[serde(default = "unit")]
        sigma: f64,
        #[serde(default = "default_box")]
        box_len: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    /// Torus side `R beta`, rounded to an even integer.
    TiltedEig { profile: Profile, r: f64, betas: Vec<f64> },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::GreenScan { .. } => "green-scan",
            Experiment::TypicalScaling { .. } => "typical-scaling",
            Experiment::ExpMoment { .. } => "exp-moment",
            Experiment::Eisenbaum { .. } => "eisenbaum",
            Experiment::Concentration { .. } => "concentration",
            Experiment::RhoDiscrete { .. } => "rho-discrete",
            Experiment::RhoConvergence { .. } => "rho-convergence",
            Experiment::Constants { .. } => "constants",
            Experiment::Legendre { .. } => "legendre",
            Experiment::TiltedEig { .. } => "tilted-eig",
        }
    }

    fn needs_law(&self) -> bool {
        !matches!(self, Experiment::Constants { .. } | Experiment::Legendre { .. })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// sha256 of the canonical JSON form, leaving out the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}: {}", self.field, self.message)
    }
}

#[derive(Default)]
struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }

    fn nonempty<T>(&mut self, field: &str, v: &[T]) -> bool {
        if v.is_empty() {
            self.error(field, "empty grid");
            false
        } else {
            true
        }
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.error(field, format!("must be positive and finite, got {v}"));
        }
    }

    fn all_positive(&mut self, field: &str, v: &[f64]) {
        if self.nonempty(field, v) && v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            self.error(field, "every entry must be positive and finite");
        }
    }

    fn increasing(&mut self, field: &str, v: &[f64]) {
        if v.windows(2).any(|w| w[1] <= w[0]) {
            self.error(field, "must be strictly increasing");
        }
    }

    fn torus(&mut self, field: &str, dim: usize, side: usize) {
        if side == 0 {
            self.error(field, "torus side must be positive");
        } else if (side as u128).pow(dim as u32) > MAX_TORUS_SITES as u128 {
            self.error(
                field,
                format!("torus of side {side} in dimension {dim} exceeds the memory cap of {MAX_TORUS_SITES} sites"),
            );
        }
    }

    fn replicas(&mut self, field: &str, n: usize, min: usize) {
        if n < min {
            self.error(field, format!("need at least {min} replicas, got {n}"));
        }
    }

    fn horizons(&mut self, field: &str, ts: &[f64]) {
        self.all_positive(field, ts);
        if ts.iter().any(|&t| t > MAX_HORIZON) {
            self.error(field, format!("horizon above the cap of {MAX_HORIZON:e}"));
        }
    }
}

/// Checks the scale window `1 << beta^alpha << t` (`d < alpha`),
/// `1 << beta^d << t / log t` (`d = alpha`) or `1 << beta^d << t` (`d > alpha`)
/// at one horizon. Returns a hard violation when an inequality fails outright
/// and a soft one when the margin is below a factor 10.
pub fn beta_window(dim: usize, alpha: f64, t: f64, beta: f64) -> Option<(Severity, String)> {
    let d = dim as f64;
    let (scale, cap, what) = if d < alpha - 1e-12 {
        (beta.powf(alpha), t, "beta^alpha << t")
    } else if (d - alpha).abs() <= 1e-12 {
        (beta.powf(d), t / t.ln(), "beta^d << t / log t")
    } else {
        (beta.powf(d), t, "beta^d << t")
    };
    if !(scale > 1.0) {
        return Some((Severity::Error, format!("scale {scale:.3e} violates 1 << beta power")));
    }
    if scale >= cap {
        return Some((Severity::Error, format!("{what} violated: {scale:.3e} >= {cap:.3e} at t = {t:e}")));
    }
    if scale * 10.0 > cap || scale < 10.0 {
        return Some((Severity::Warning, format!("{what} holds with margin below 10 at t = {t:e}")));
    }
    None
}

/// Same window for a power schedule `beta_t = t^e`, as a statement about
/// exponents: `0 < alpha e < 1` (`d < alpha`) or `0 < d e < 1` otherwise.
pub fn schedule_window(dim: usize, alpha: f64, exponent: f64) -> Option<String> {
    let d = dim as f64;
    let power = if d < alpha - 1e-12 { alpha } else { d };
    let e = power * exponent;
    if e > 0.0 && e < 1.0 {
        None
    } else {
        Some(format!(
            "schedule beta = t^{exponent} gives beta^{power} = t^{e:.3}, outside the window (0, 1)"
        ))
    }
}

/// Every problem with the config, errors and warnings alike; an empty list
/// means the run may start.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut dg = Diagnostics::default();
    let tol = &config.tolerances;
    if !(tol.scale > 0.0 && tol.scale.is_finite()) {
        dg.error("tolerances.scale", "must be positive and finite");
    }
    for (k, v) in &tol.overrides {
        if !(*v >= 0.0 && v.is_finite()) {
            dg.error(&format!("tolerances.overrides.{k}"), "must be nonnegative and finite");
        }
    }
    if config.solver.restarts == 0 && config.solver.max_iter == 0 {
        dg.error("solver", "max_iter must be positive");
    }
    let law = match (&config.law, config.experiment.needs_law()) {
        (Some(spec), _) => match IncrementLaw::from_spec(spec) {
            Ok(l) => Some(l),
            Err(e) => {
                dg.error("law", e.to_string());
                None
            }
        },
        (None, true) => {
            dg.error("law", format!("experiment `{}` needs a law", config.experiment.kind()));
            None
        }
        (None, false) => None,
    };
    let dim = law.as_ref().map(|l| l.dim());
    let alpha = law.as_ref().map(|l| l.alpha());

    match &config.experiment {
        Experiment::GreenScan { r, a, betas } => {
            dg.positive("experiment.r", *r);
            dg.positive("experiment.a", *a);
            dg.all_positive("experiment.betas", betas);
            dg.increasing("experiment.betas", betas);
            if betas.iter().any(|&b| b < 2.0) {
                dg.error("experiment.betas", "every beta must be >= 2");
            }
            if let (Some(d), true) = (dim, *r > 0.0) {
                for &b in betas.iter().filter(|b| b.is_finite()) {
                    dg.torus("experiment.betas", d, scan_side(*r, b));
                }
            }
        }
        Experiment::TypicalScaling { p, horizons, replicas } => {
            if !(*p >= 1.0) {
                dg.error("experiment.p", "p must be >= 1");
            }
            dg.horizons("experiment.horizons", horizons);
            if horizons.len() == 1 {
                dg.error("experiment.horizons", "need at least two horizons");
            }
            let (lo, hi) = horizons.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &t| (l.min(t), h.max(t)));
            if horizons.len() >= 2 && !(lo > 1.0 && hi / lo >= 100.0 - 1e-9) {
                dg.error("experiment.horizons", "horizons must exceed 1 and span at least two decades");
            }
            dg.replicas("experiment.replicas", *replicas, 1000);
        }
        Experiment::ExpMoment {
            p,
            thetas,
            horizons,
            beta,
            replicas,
            rho,
        } => {
            if !(*p > 1.0) {
                dg.error("experiment.p", "exponential moments need p > 1");
            }
            if dg.nonempty("experiment.thetas", thetas) && thetas.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                dg.error("experiment.thetas", "theta must be finite and >= 0");
            }
            dg.horizons("experiment.horizons", horizons);
            dg.replicas("experiment.replicas", *replicas, 2);
            if let Some(r) = rho {
                dg.positive("experiment.rho", *r);
            }
            if let (Some(d), Some(al)) = (dim, alpha) {
                if *p > 1.0 {
                    if let Err(e) = check_subcritical(d, al, *p) {
                        dg.error("experiment.p", format!("prediction undefined: {e}"));
                    }
                }
                if let BetaSchedule::Power { exponent } = beta {
                    if let Some(m) = schedule_window(d, al, *exponent) {
                        dg.error("experiment.beta", m);
                    }
                }
                for &t in horizons.iter().filter(|t| **t > 1.0) {
                    match beta_window(d, al, t, beta.beta(t)) {
                        Some((Severity::Error, m)) => dg.error("experiment.beta", m),
                        Some((Severity::Warning, m)) => dg.warn("experiment.beta", m),
                        None => {}
                    }
                }
            }
        }
        Experiment::Eisenbaum {
            sides,
            lambdas,
            shifts,
            functionals,
            replicas,
        } => {
            if dg.nonempty("experiment.sides", sides) {
                if let Some(d) = dim {
                    for &s in sides {
                        dg.torus("experiment.sides", d, s);
                    }
                }
            }
            dg.all_positive("experiment.lambdas", lambdas);
            if dg.nonempty("experiment.shifts", shifts) && shifts.iter().any(|s| *s == 0.0 || !s.is_finite()) {
                dg.error("experiment.shifts", "shifts must be nonzero and finite");
            }
            if dg.nonempty("experiment.functionals", functionals) {
                for f in functionals {
                    match f.parse::<TestFunctional>() {
                        Ok(tf) if !tf.is_bounded() => {
                            dg.error("experiment.functionals", format!("`{f}` is unbounded"))
                        }
                        Ok(_) => {}
                        Err(e) => dg.error("experiment.functionals", e.to_string()),
                    }
                }
            }
            dg.replicas("experiment.replicas", *replicas, 2);
        }
        Experiment::Concentration { side, lambda, p, replicas } => {
            if let Some(d) = dim {
                dg.torus("experiment.side", d, *side);
            }
            dg.positive("experiment.lambda", *lambda);
            if !(*p >= 1.0) {
                dg.error("experiment.p", "p must be >= 1");
            }
            dg.replicas("experiment.replicas", *replicas, 100);
        }
        Experiment::RhoDiscrete { p, a, r, betas } | Experiment::RhoConvergence { p, a, r, betas, .. } => {
            if !(*p >= 1.0) {
                dg.error("experiment.p", "p must be >= 1");
            }
            dg.positive("experiment.a", *a);
            dg.positive("experiment.r", *r);
            dg.all_positive("experiment.betas", betas);
            if let (Some(d), true) = (dim, *r > 0.0) {
                for &b in betas.iter().filter(|b| b.is_finite()) {
                    let side = (r * b).round();
                    if side < 2.0 || side % 2.0 != 0.0 {
                        dg.error("experiment.betas", format!("torus side round(R beta) = {side} must be even and >= 2"));
                    } else {
                        dg.torus("experiment.betas", d, side as usize);
                    }
                }
            }
            if let Experiment::RhoConvergence { resolution, .. } = &config.experiment {
                dg.increasing("experiment.betas", betas);
                if let Some(d) = dim {
                    continuum_grid(&mut dg, d, *resolution);
                }
                if let (Some(d), Some(al)) = (dim, alpha) {
                    if *p > 1.0 {
                        if let Err(e) = check_subcritical(d, al, *p) {
                            dg.error("experiment.p", e.to_string());
                        }
                    }
                }
            }
        }
        Experiment::Constants {
            dim,
            alphas,
            p,
            sigma,
            box_len,
            resolution,
            a_values,
        } => {
            if dg.nonempty("experiment.alphas", alphas) {
                for &al in alphas {
                    if let Err(e) = check_subcritical(*dim, al, *p) {
                        dg.error("experiment.alphas", e.to_string());
                    }
                }
            }
            dg.positive("experiment.sigma", *sigma);
            dg.positive("experiment.box_len", *box_len);
            continuum_grid(&mut dg, *dim, *resolution);
            if !a_values.is_empty() {
                dg.all_positive("experiment.a_values", a_values);
                if a_values.len() < 2 {
                    dg.error("experiment.a_values", "a power-law fit needs at least two values");
                }
            }
        }
        Experiment::Legendre {
            dim,
            alpha,
            p,
            xs,
            sigma,
            box_len,
            resolution,
        } => {
            if let Err(e) = check_subcritical(*dim, *alpha, *p) {
                dg.error("experiment", e.to_string());
            }
            dg.all_positive("experiment.xs", xs);
            dg.positive("experiment.sigma", *sigma);
            dg.positive("experiment.box_len", *box_len);
            continuum_grid(&mut dg, *dim, *resolution);
        }
        Experiment::TiltedEig { profile, r, betas } => {
            dg.positive("experiment.r", *r);
            dg.all_positive("experiment.betas", betas);
            if let (Some(d), true) = (dim, *r > 0.0) {
                for &b in betas.iter().filter(|b| b.is_finite()) {
                    let side = scan_side(*r, b);
                    dg.torus("experiment.betas", d, side);
                    if 2.0 * profile.radius() * b >= side as f64 {
                        dg.error("experiment.r", format!("torus side {side} does not exceed the profile support at beta {b}"));
                    }
                }
            }
        }
    }
    dg.0
}

fn continuum_grid(dg: &mut Diagnostics, dim: usize, m: usize) {
    if m < 2 || !m.is_power_of_two() {
        dg.error("experiment.resolution", format!("must be a power of two >= 2, got {m}"));
    } else if TorusGrid::new(dim, 2 * m).is_err() {
        // Every continuum solve is repeated at twice the resolution.
        dg.error("experiment.resolution", format!("doubled grid of side {} exceeds the memory cap", 2 * m));
    }
}

/// Table column with its unit (empty for dimensionless quantities).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub unit: &'static str,
}

const fn col(name: &'static str, unit: &'static str) -> Column {
    Column { name, unit }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub x_label: &'static str,
    pub y_label: &'static str,
    pub points: Vec<(f64, f64)>,
}

#[derive(Default)]
struct TaskOutput {
    rows: Vec<Vec<Value>>,
    checks: Vec<Check>,
    series: Vec<Series>,
    extra: BTreeMap<String, Value>,
}

impl TaskOutput {
    fn check(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskError {
    pub task: String,
    pub error: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    ChecksFailed,
    PartialFailure,
}

impl RunStatus {
    /// Process exit code: 0, 3 and 1 respectively (2 is reserved for
    /// configs refused by validation).
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Completed => 0,
            RunStatus::PartialFailure => 1,
            RunStatus::ChecksFailed => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub status: RunStatus,
    pub out_dir: PathBuf,
    pub checks: Vec<Check>,
    pub errors: Vec<TaskError>,
    pub warnings: Vec<Diagnostic>,
    pub artifacts: Vec<PathBuf>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

/// Errors from [`run`]: a refused config, or an I/O failure while writing.
#[derive(Debug)]
pub enum RunError {
    Invalid(Vec<Diagnostic>),
    Failed(Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Invalid(d) => {
                writeln!(f, "configuration refused:")?;
                for x in d.iter().filter(|x| x.severity == Severity::Error) {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
            RunError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Failed(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Failed(e.into())
    }
}

type TaskFn<'a> = Box<dyn Fn() -> Result<TaskOutput> + Send + Sync + 'a>;

struct Plan<'a> {
    columns: Vec<Column>,
    tasks: Vec<(String, TaskFn<'a>)>,
}

/// Validates, runs and writes artifacts into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let start = Instant::now();
    let diags = validate(config);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(RunError::Invalid(diags));
    }
    let hash = config.hash();
    let law = config.law.as_ref().map(IncrementLaw::from_spec).transpose()?;
    let plan = plan(config, law.as_ref());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Result<TaskOutput>)> = pool.install(|| {
        plan.tasks
            .par_iter()
            .map(|(name, f)| {
                let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    Err(Error::Config(format!("task panicked: {msg}")))
                });
                (name.clone(), r)
            })
            .collect()
    });

    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut series = Vec::new();
    let mut errors = Vec::new();
    let mut extra = BTreeMap::new();
    for (task, r) in results {
        match r {
            Ok(out) => {
                for row in out.rows {
                    let mut full = vec![json!(hash), json!(task)];
                    full.extend(row);
                    rows.push(full);
                }
                for mut c in out.checks {
                    c.name = format!("{task}/{}", c.name);
                    checks.push(c);
                }
                series.extend(out.series.into_iter().map(|mut s| {
                    s.name = format!("{task}-{}", s.name);
                    s
                }));
                for (k, v) in out.extra {
                    extra.insert(format!("{task}/{k}"), v);
                }
            }
            Err(e) => errors.push(TaskError {
                task,
                error: e.to_string(),
            }),
        }
    }
    let mut columns = vec![col("config_hash", ""), col("task", "")];
    columns.extend(plan.columns);

    let mut artifacts = Vec::new();
    let csv_path = out_dir.join("results.csv");
    write_csv(&csv_path, &columns, &rows)?;
    artifacts.push(csv_path);

    let status = if !errors.is_empty() {
        RunStatus::PartialFailure
    } else if checks.iter().any(|c| !c.pass) {
        RunStatus::ChecksFailed
    } else {
        RunStatus::Completed
    };
    let warnings: Vec<Diagnostic> = diags;
    let json_path = out_dir.join("results.json");
    let doc = json!({
        "config_hash": hash,
        "experiment": config.experiment.kind(),
        "status": status,
        "columns": columns,
        "rows": rows,
        "checks": checks,
        "errors": errors,
        "warnings": warnings,
        "extra": extra,
        "config": config,
    });
    fs::write(&json_path, serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n")?;
    artifacts.push(json_path);

    if !series.is_empty() {
        let dir = out_dir.join("series");
        fs::create_dir_all(&dir)?;
        for s in &series {
            let path = dir.join(format!("{}.csv", s.name));
            let cols = [col("config_hash", ""), col(s.x_label, ""), col(s.y_label, "")];
            let rows: Vec<Vec<Value>> = s.points.iter().map(|(x, y)| vec![json!(hash), num(*x), num(*y)]).collect();
            write_csv(&path, &cols, &rows)?;
            artifacts.push(path);
        }
    }

    if let Experiment::Constants { .. } = config.experiment {
        let entries: Vec<_> = extra
            .iter()
            .filter(|(k, _)| k.ends_with("/record"))
            .filter_map(|(_, v)| serde_json::from_value(v.clone()).ok())
            .collect();
        if !entries.is_empty() {
            let reg = ConstantsRegistry {
                config_hash: Some(hash.clone()),
                entries,
            };
            let path = out_dir.join("constants.json");
            reg.save(&path)?;
            artifacts.push(path);
        }
    }

    let wall_seconds = start.elapsed().as_secs_f64();
    let listed: Vec<Value> = artifacts
        .iter()
        .map(|p| {
            let bytes = fs::read(p).unwrap_or_default();
            json!({
                "path": p.strip_prefix(out_dir).unwrap_or(p),
                "sha256": hex(&Sha256::digest(&bytes)),
            })
        })
        .collect();
    let manifest = json!({
        "tool": "silt",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "experiment": config.experiment.kind(),
        "seed": config.seed,
        "workers": pool.current_num_threads(),
        "status": status,
        "wall_seconds": wall_seconds,
        "artifacts": listed,
    });
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n")?;
    artifacts.push(manifest_path);

    Ok(RunReport {
        config_hash: hash,
        status,
        out_dir: out_dir.to_path_buf(),
        checks,
        errors,
        warnings,
        artifacts,
        wall_seconds,
    })
}

/// JSON number, or null for NaN and infinities.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn write_csv(path: &Path, columns: &[Column], rows: &[Vec<Value>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
    let err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(columns.iter().map(|c| c.name)).map_err(err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }))
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn plan<'a>(config: &'a ExperimentConfig, law: Option<&'a IncrementLaw>) -> Plan<'a> {
    let tol = &config.tolerances;
    let solve = SolveOptions {
        seed: config.seed,
        ..config.solver
    };
    let seed = config.seed;
    let law = move || law.expect("validated");
    let mut tasks: Vec<(String, TaskFn<'a>)> = Vec::new();
    let columns = match &config.experiment {
        Experiment::GreenScan { r, a, betas } => {
            tasks.push((
                "scan".into(),
                Box::new(move || {
                    let law = law();
                    let scan = green_origin_scan(law, *r, *a, betas)?;
                    let mut out = TaskOutput::default();
                    for row in &scan.rows {
                        out.rows.push(vec![num(row.beta), json!(row.side), num(row.lambda), num(row.g00)]);
                    }
                    out.series.push(Series {
                        name: "g00".into(),
                        x_label: "beta",
                        y_label: "g00",
                        points: scan.rows.iter().map(|r| (r.beta, r.g00)).collect(),
                    });
                    out.extra.insert("log_slope".into(), num(scan.log_slope));
                    out.extra.insert("fitted_class".into(), json!(scan.fitted_class));
                    out.extra.insert("expected_class".into(), json!(scan.expected_class));
                    out.check(
                        "class-mismatch",
                        f64::from(u8::from(scan.fitted_class != scan.expected_class)),
                        0.0,
                    );
                    match scan.expected_class {
                        GrowthClass::Power => {
                            let want = law.alpha() - law.dim() as f64;
                            out.check("slope-error", (scan.log_slope - want).abs(), tol.get("slope-error", 0.1));
                        }
                        GrowthClass::Logarithmic => {
                            out.check("log-ratio-spread", scan.log_ratio_spread, tol.get("log-ratio-spread", 2.0))
                        }
                        GrowthClass::Bounded => out.check(
                            "top-octave-spread",
                            scan.top_octave_spread,
                            tol.get("top-octave-spread", 0.05),
                        ),
                    }
                    Ok(out)
                }),
            ));
            vec![col("beta", ""), col("side", "sites"), col("lambda", "1/time"), col("g00", "time")]
        }
        Experiment::TypicalScaling { p, horizons, replicas } => {
            tasks.push((
                "fit".into(),
                Box::new(move || {
                    let law = law();
                    let fit = typical_scaling_fit(law, *p, horizons, *replicas, seed)?;
                    let mut out = TaskOutput::default();
                    for r in &fit.rows {
                        out.rows.push(vec![num(r.t), num(r.mean_i), num(r.se), num(r.rel_se), num(r.log_corrected_ratio)]);
                    }
                    out.series.push(Series {
                        name: "mean-i".into(),
                        x_label: "t",
                        y_label: "mean_i",
                        points: fit.rows.iter().map(|r| (r.t, r.mean_i)).collect(),
                    });
                    out.extra.insert("fitted_exponent".into(), num(fit.fitted_exponent));
                    out.extra.insert("predicted_exponent".into(), num(fit.predicted_exponent));
                    out.extra.insert("class".into(), json!(fit.class));
                    match fit.class {
                        ScalingClass::Critical => out.check(
                            "no-log-correction",
                            f64::from(u8::from(!fit.log_correction)),
                            0.0,
                        ),
                        ScalingClass::Recurrent => out.check(
                            "exponent",
                            (fit.fitted_exponent - fit.predicted_exponent).abs(),
                            tol.get("exponent", 0.05),
                        ),
                        ScalingClass::Transient => out.check(
                            "exponent",
                            (fit.fitted_exponent - fit.predicted_exponent).abs(),
                            tol.get("exponent", 0.1),
                        ),
                    }
                    Ok(out)
                }),
            ));
            vec![
                col("t", "time"),
                col("mean_i", "time^p"),
                col("se", "time^p"),
                col("rel_se", ""),
                col("log_corrected_ratio", ""),
            ]
        }
        Experiment::ExpMoment {
            p,
            thetas,
            horizons,
            beta,
            replicas,
            rho,
        } => {
            for (k, &t) in horizons.iter().enumerate() {
                tasks.push((
                    format!("t={t}"),
                    Box::new(move || {
                        let law = law();
                        let rho = match rho {
                            Some(r) => *r,
                            None => law_rho(law, *p, &solve)?,
                        };
                        let (d, alpha) = (law.dim() as f64, law.alpha());
                        let aq = alpha * conjugate(*p);
                        let b = beta.beta(t);
                        let curve = exp_moment_curve(law, *p, thetas, b, t, *replicas, replica_seed(seed, k as u64))?;
                        let mut out = TaskOutput::default();
                        let mut excess = f64::NEG_INFINITY;
                        for m in &curve {
                            let pred = (m.theta / rho).powf(aq / (aq - d));
                            let ratio = m.estimate / pred;
                            if m.well_sampled && m.theta > 0.0 {
                                excess = excess.max(ratio - 1.0);
                            }
                            out.rows.push(vec![
                                num(t),
                                num(b),
                                num(m.theta),
                                num(m.estimate),
                                num(m.se),
                                num(m.ess),
                                num(m.top_share),
                                json!(m.well_sampled),
                                num(pred),
                                num(ratio),
                            ]);
                        }
                        out.series.push(Series {
                            name: "estimate".into(),
                            x_label: "theta",
                            y_label: "estimate",
                            points: curve.iter().map(|m| (m.theta, m.estimate)).collect(),
                        });
                        out.extra.insert("rho".into(), num(rho));
                        if excess.is_finite() {
                            out.check("excess", excess, tol.get("excess", 0.25));
                        }
                        Ok(out)
                    }),
                ));
            }
            vec![
                col("t", "time"),
                col("beta", ""),
                col("theta", ""),
                col("estimate", ""),
                col("se", ""),
                col("ess", "replicas"),
                col("top_share", ""),
                col("well_sampled", ""),
                col("prediction", ""),
                col("ratio", ""),
            ]
        }
        Experiment::Eisenbaum {
            sides,
            lambdas,
            shifts,
            functionals,
            replicas,
        } => {
            let parsed: Vec<TestFunctional> = functionals.iter().filter_map(|f| f.parse().ok()).collect();
            let mut k = 0u64;
            for &side in sides {
                for &lambda in lambdas {
                    for &s in shifts {
                        let parsed = parsed.clone();
                        let task_seed = replica_seed(seed, k);
                        k += 1;
                        tasks.push((
                            format!("side={side},lambda={lambda},s={s}"),
                            Box::new(move || {
                                let reps = eisenbaum_check(law(), side, lambda, s, &parsed, *replicas, task_seed)?;
                                let mut out = TaskOutput::default();
                                let mut worst = 0.0f64;
                                for r in &reps {
                                    worst = worst.max(r.z_score);
                                    out.rows.push(vec![
                                        json!(side),
                                        num(lambda),
                                        num(s),
                                        json!(r.functional),
                                        num(r.lhs),
                                        num(r.lhs_se),
                                        num(r.rhs),
                                        num(r.rhs_se),
                                        num(r.z_score),
                                    ]);
                                }
                                out.check("z", worst, tol.get("z", 3.0));
                                Ok(out)
                            }),
                        ));
                    }
                }
            }
            vec![
                col("side", "sites"),
                col("lambda", "1/time"),
                col("shift", ""),
                col("functional", ""),
                col("lhs", ""),
                col("lhs_se", ""),
                col("rhs", ""),
                col("rhs_se", ""),
                col("z", "standard errors"),
            ]
        }
        Experiment::Concentration { side, lambda, p, replicas } => {
            tasks.push((
                "concentration".into(),
                Box::new(move || {
                    let kernel = GreenKernel::new(law(), *side, *lambda)?;
                    let rho = crate::variational::solve_discrete_rho_kernel(&kernel, *p, &solve)?;
                    let rep = norm_concentration_check(&kernel, *p, rho.raw, *replicas, seed)?;
                    let mut out = TaskOutput::default();
                    for i in 0..rep.ys.len() {
                        out.rows.push(vec![
                            num(rep.ys[i]),
                            num(rep.empirical[i]),
                            num(rep.se[i]),
                            num(rep.bound[i]),
                            json!(rep.violations.contains(&i)),
                        ]);
                    }
                    out.series.push(Series {
                        name: "tail".into(),
                        x_label: "y",
                        y_label: "empirical",
                        points: rep.ys.iter().copied().zip(rep.empirical.iter().copied()).collect(),
                    });
                    out.extra.insert("rho".into(), num(rho.raw));
                    out.extra.insert("median".into(), num(rep.median));
                    out.check("violations", rep.violations.len() as f64, tol.get("violations", 0.0));
                    out.check(
                        "median-bound",
                        f64::from(u8::from(!rep.median_bound_holds)),
                        0.0,
                    );
                    Ok(out)
                }),
            ));
            vec![
                col("y", ""),
                col("empirical", "probability"),
                col("se", "probability"),
                col("bound", "probability"),
                col("violation", ""),
            ]
        }
        Experiment::RhoDiscrete { p, a, r, betas } => {
            for &b in betas {
                tasks.push((
                    format!("beta={b}"),
                    Box::new(move || {
                        let law = law();
                        let res = solve_discrete_rho(law, *a, *r, b, *p, &solve)?;
                        let mut out = TaskOutput::default();
                        let dual_gap = if res.side <= dual_side_limit(law.dim()) && *p > 1.0 {
                            let kernel = GreenKernel::new(law, res.side, res.lambda)?;
                            let dual = solve_dual_rho1(&kernel, *p, &solve)?;
                            if dual.certified {
                                out.check("duality-gap", dual.duality_gap, tol.get("duality-gap", 1e-3));
                            }
                            dual.duality_gap
                        } else {
                            f64::NAN
                        };
                        out.check("upper-bound", res.raw - res.upper_bound, 1e-12 * res.upper_bound);
                        out.rows.push(vec![
                            num(b),
                            json!(res.side),
                            num(res.lambda),
                            num(res.raw),
                            num(res.rescaled),
                            num(res.upper_bound),
                            num(res.lagrange_gap),
                            json!(res.result.certified),
                            num(res.result.negative_fraction),
                            num(dual_gap),
                        ]);
                        Ok(out)
                    }),
                ));
            }
            vec![
                col("beta", ""),
                col("side", "sites"),
                col("lambda", "1/time"),
                col("raw", ""),
                col("rescaled", ""),
                col("upper_bound", ""),
                col("lagrange_gap", ""),
                col("certified", ""),
                col("negative_fraction", ""),
                col("duality_gap", ""),
            ]
        }
        Experiment::RhoConvergence {
            p,
            a,
            r,
            betas,
            resolution,
        } => {
            tasks.push((
                "scan".into(),
                Box::new(move || {
                    let scan = convergence_scan_discrete_to_periodic(law(), *a, *r, *p, betas, *resolution, &solve)?;
                    let mut out = TaskOutput::default();
                    for row in &scan.rows {
                        out.rows.push(vec![
                            num(row.beta),
                            json!(row.side),
                            num(row.raw),
                            num(row.rescaled),
                            num(row.upper_bound),
                            num(row.gap),
                            json!(row.certified),
                        ]);
                    }
                    out.series.push(Series {
                        name: "gap".into(),
                        x_label: "beta",
                        y_label: "gap",
                        points: scan.rows.iter().map(|r| (r.beta, r.gap)).collect(),
                    });
                    out.extra.insert("reference".into(), num(scan.reference));
                    out.extra.insert("sigma".into(), num(scan.sigma));
                    out.check("final-gap", scan.final_gap, tol.get("final-gap", 0.1));
                    if betas.len() >= 3 {
                        out.check("tail-not-decreasing", f64::from(u8::from(!scan.tail_decreasing)), 0.0);
                    }
                    let over = scan.rows.iter().filter(|r| r.rescaled > r.upper_bound * (1.0 + 1e-12)).count();
                    out.check("upper-bound-violations", over as f64, 0.0);
                    Ok(out)
                }),
            ));
            vec![
                col("beta", ""),
                col("side", "sites"),
                col("raw", ""),
                col("rescaled", ""),
                col("upper_bound", ""),
                col("gap", ""),
                col("certified", ""),
            ]
        }
        Experiment::Constants {
            dim,
            alphas,
            p,
            sigma,
            box_len,
            resolution,
            a_values,
        } => {
            for &alpha in alphas {
                tasks.push((
                    format!("alpha={alpha}"),
                    Box::new(move || {
                        let rec = compute_constants(*dim, alpha, *p, *sigma, *box_len, *resolution, &solve)?;
                        let mut out = TaskOutput::default();
                        let (slope, expected) = if a_values.len() >= 2 {
                            let fit = rho_power_law(*dim, alpha, *p, *sigma, a_values, *box_len, *resolution, &solve)?;
                            out.check(
                                "power-law",
                                (fit.slope - fit.expected).abs() / fit.expected.abs(),
                                tol.get("power-law", 0.02),
                            );
                            (fit.slope, fit.expected)
                        } else {
                            (f64::NAN, f64::NAN)
                        };
                        out.check("relation", rec.relation_gap, tol.get("relation", 0.02));
                        out.check("chi-drift", rec.chi_drift, tol.get("drift", 0.01));
                        out.rows.push(vec![
                            num(alpha),
                            num(rec.chi),
                            num(rec.rho),
                            num(rec.rho_from_chi),
                            num(rec.relation_gap),
                            num(rec.chi_drift),
                            num(rec.rho_drift),
                            num(slope),
                            num(expected),
                            json!(rec.chi_certified && rec.rho_certified),
                        ]);
                        out.extra.insert("record".into(), serde_json::to_value(&rec)?);
                        Ok(out)
                    }),
                ));
            }
            vec![
                col("alpha", ""),
                col("chi", ""),
                col("rho", ""),
                col("rho_from_chi", ""),
                col("relation_gap", ""),
                col("chi_drift", ""),
                col("rho_drift", ""),
                col("power_slope", ""),
                col("power_expected", ""),
                col("certified", ""),
            ]
        }
        Experiment::Legendre {
            dim,
            alpha,
            p,
            xs,
            sigma,
            box_len,
            resolution,
        } => {
            tasks.push((
                "legendre".into(),
                Box::new(move || {
                    let rec = compute_constants(*dim, *alpha, *p, *sigma, *box_len, *resolution, &solve)?;
                    let tolerance = tol.get("legendre", 0.005);
                    let rep = legendre_consistency(*dim, *alpha, *p, rec.chi, rec.rho, xs, 20_001, tolerance)?;
                    let mut out = TaskOutput::default();
                    for r in &rep.rows {
                        out.rows.push(vec![num(r.x), num(r.transform), num(r.rate), num(r.rel_err)]);
                    }
                    out.series.push(Series {
                        name: "transform".into(),
                        x_label: "x",
                        y_label: "transform",
                        points: rep.rows.iter().map(|r| (r.x, r.transform)).collect(),
                    });
                    out.extra.insert("chi".into(), num(rec.chi));
                    out.extra.insert("rho".into(), num(rec.rho));
                    out.extra.insert("doubling_ratio".into(), num(rep.doubling_ratio));
                    out.extra.insert("expected_doubling_ratio".into(), num(rep.expected_doubling_ratio));
                    out.check("legendre", rep.max_rel_err, tolerance);
                    Ok(out)
                }),
            ));
            vec![col("x", ""), col("transform", ""), col("rate", ""), col("rel_err", "")]
        }
        Experiment::TiltedEig { profile, r, betas } => {
            for &b in betas {
                tasks.push((
                    format!("beta={b}"),
                    Box::new(move || {
                        let side = scan_side(*r, b);
                        let e = tilted_principal_eigenvalue(law(), *profile, b, side, &solve)?;
                        let mut out = TaskOutput::default();
                        out.rows.push(vec![
                            num(b),
                            json!(side),
                            num(e.eigenvalue),
                            num(e.scaled),
                            num(e.sup_form),
                            num(e.scaled_sup_form),
                            num(e.rel_gap),
                            json!(e.iterations),
                            json!(e.sup_certified),
                        ]);
                        out.check("eig-gap", e.rel_gap, tol.get("eig-gap", 0.01));
                        out.check("below-sup-form", e.sup_form - e.eigenvalue, 1e-8);
                        Ok(out)
                    }),
                ));
            }
            vec![
                col("beta", ""),
                col("side", "sites"),
                col("eigenvalue", "1/time"),
                col("scaled", ""),
                col("sup_form", "1/time"),
                col("scaled_sup_form", ""),
                col("rel_gap", ""),
                col("iterations", ""),
                col("sup_certified", ""),
            ]
        }
    };
    Plan { columns, tasks }
}

/// Whole-space `rho` in the normalization of `law`: solved at unit energy
/// weight and rescaled by `sigma^{d/(alpha q)}`.
pub fn law_rho(law: &IncrementLaw, p: f64, opts: &SolveOptions) -> Result<f64> {
    let (dim, alpha) = (law.dim(), law.alpha());
    let m = if dim == 1 { 256 } else { 32 };
    let unit = solve_whole_space(WholeSpace::Rho { a: 1.0 }, dim, alpha, p, 16.0, m, 1.0, opts)?;
    Ok(law.sigma().powf(dim as f64 / (alpha * conjugate(p))) * unit.result.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_examples() {
        // beta = t^0.6 with d = 1, alpha = 2 gives beta^2 = t^1.2.
        assert_eq!(
            beta_window(1, 2.0, 1e4, 1e4f64.powf(0.6)).map(|v| v.0),
            Some(Severity::Error)
        );
        assert!(schedule_window(1, 2.0, 0.6).is_some());
        assert!(schedule_window(1, 2.0, 0.3).is_none());
        assert!(beta_window(1, 2.0, 1e4, 1e4f64.powf(0.3)).is_none());
        assert_eq!(beta_window(1, 2.0, 1e4, 1.0).map(|v| v.0), Some(Severity::Error));
        // d = alpha uses t / log t.
        assert_eq!(beta_window(1, 1.0, 100.0, 30.0).map(|v| v.0), Some(Severity::Error));
    }

    #[test]
    fn tolerance_lookup() {
        let mut t = Tolerances::default();
        t.overrides.insert("z".into(), 4.0);
        t.scale = 0.5;
        assert_eq!(t.get("z", 3.0), 2.0);
        assert_eq!(t.get("other", 3.0), 1.5);
    }
}
