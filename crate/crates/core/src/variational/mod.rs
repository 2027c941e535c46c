//! Variational constants: discrete, periodic and whole-space minimizations of
//! fractional energies on norm spheres, the dual sup problem, the tilted
//! principal eigenvalue and the identities tying them together.
//!
//! Continuum problems on a box `[0, L]^d` sampled at `M^d` points use the
//! trapezoid rule: with `h = L / M` the objective is
//! `(1/M^d) sum_n h^d (a + sigma |n / L|^alpha) |DFT g(n)|^2` and the
//! constraint `h^d sum |g|^{2p} = 1`.

mod engine;
mod legendre;
mod singular;
mod tilted;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{kahan_sum, linear_fit};
use crate::torus_fourier::{TorusFft, TorusGrid};
use crate::walk_kernel::{GreenKernel, IncrementLaw};
use crate::walk_simulator::{replica_seed, rng_from_seed};

pub use engine::{resample_periodic, SolveOptions, VariationalResult};
pub use legendre::{legendre_consistency, legendre_transform, LegendreReport, LegendreRow};
pub use singular::{singular_integral_crosscheck, SingularCheck};
pub use tilted::{tilted_principal_eigenvalue, Profile, TiltedEigen};

use engine::{initial_fields, Constraint, SphereProblem};

/// Conjugate exponent `q = p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// Rejects `p <= 1` and `d >= alpha q`.
pub fn check_subcritical(dim: usize, alpha: f64, p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid(format!("p must exceed 1, got {p}")));
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    let aq = alpha * conjugate(p);
    if dim as f64 >= aq {
        return Err(Error::NotSubcritical { dim, alpha_q: aq });
    }
    Ok(())
}

/// `rho = (aq/(aq - d)) ((aq - d)/d chi)^{d/aq}` with `aq = alpha q`.
pub fn rho_from_chi(dim: usize, alpha: f64, p: f64, chi: f64) -> f64 {
    let d = dim as f64;
    let aq = alpha * conjugate(p);
    aq / (aq - d) * ((aq - d) / d * chi).powf(d / aq)
}

/// Inverse of [`rho_from_chi`].
pub fn chi_from_rho(dim: usize, alpha: f64, p: f64, rho: f64) -> f64 {
    let d = dim as f64;
    let aq = alpha * conjugate(p);
    (rho * (aq - d) / aq).powf(aq / d) * d / (aq - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    DiscreteTorus,
    PeriodicContinuum,
    WholeSpace,
    Chi,
}

/// Parameters of one constrained minimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalProblem {
    pub flavor: Flavor,
    pub dim: usize,
    pub alpha: f64,
    pub p: f64,
    #[serde(default = "one")]
    pub a: f64,
    /// Period (periodic flavor) or torus side in scaled units (discrete).
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Grid side for continuum flavors.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Box length for whole-space flavors.
    #[serde(default)]
    pub box_len: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl VariationalProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.sigma > 0.0) {
            return Err(invalid("a and sigma must be positive"));
        }
        match self.flavor {
            Flavor::DiscreteTorus => {
                if !(self.p >= 1.0) {
                    return Err(invalid("p must be at least 1"));
                }
                let (r, b) = (self.r.ok_or_else(|| invalid("missing R"))?, self.beta.ok_or_else(|| invalid("missing beta"))?);
                discrete_side(r, b)?;
            }
            _ => {
                check_subcritical(self.dim, self.alpha, self.p)?;
                let m = self.resolution.ok_or_else(|| invalid("missing grid resolution"))?;
                if !m.is_power_of_two() || m < 2 {
                    return Err(invalid(format!("grid resolution must be a power of two, got {m}")));
                }
                TorusGrid::new(self.dim, m)?;
                if self.flavor == Flavor::PeriodicContinuum && !(self.r.unwrap_or(0.0) > 0.0) {
                    return Err(invalid("periodic problems need R > 0"));
                }
                if self.flavor != Flavor::PeriodicContinuum && !(self.box_len.unwrap_or(0.0) > 0.0) {
                    return Err(invalid("whole-space problems need a box length"));
                }
            }
        }
        Ok(())
    }

    /// Solves with the law required by the discrete flavor (ignored otherwise).
    pub fn solve(&self, law: Option<&IncrementLaw>, opts: &SolveOptions) -> Result<VariationalResult> {
        self.validate()?;
        let m = self.resolution.unwrap_or(0);
        Ok(match self.flavor {
            Flavor::DiscreteTorus => {
                let law = law.ok_or_else(|| invalid("discrete problems need an increment law"))?;
                solve_discrete_rho(law, self.a, self.r.unwrap(), self.beta.unwrap(), self.p, opts)?.result
            }
            Flavor::PeriodicContinuum => {
                solve_periodic_rho(self.dim, self.a, self.r.unwrap(), self.alpha, self.p, m, self.sigma, opts)?.result
            }
            Flavor::WholeSpace => {
                solve_whole_space(WholeSpace::Rho { a: self.a }, self.dim, self.alpha, self.p, self.box_len.unwrap(), m, self.sigma, opts)?.result
            }
            Flavor::Chi => {
                solve_whole_space(WholeSpace::Chi, self.dim, self.alpha, self.p, self.box_len.unwrap(), m, self.sigma, opts)?.result
            }
        })
    }
}

fn discrete_side(r: f64, beta: f64) -> Result<usize> {
    if !(r > 0.0 && beta > 0.0) {
        return Err(invalid("R and beta must be positive"));
    }
    let side = (r * beta).round();
    if side < 2.0 || side % 2.0 != 0.0 {
        return Err(invalid(format!("torus side round(R beta) = {side} must be even and at least 2")));
    }
    Ok(side as usize)
}

/// Minimizer of `lambda |h|_2^2 + <h, (1 - F) h>` on the unit `l_{2p}` sphere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteRho {
    pub result: VariationalResult,
    pub lambda: f64,
    pub side: usize,
    /// Unrescaled minimum.
    pub raw: f64,
    /// `beta^{alpha - d/q} raw` (equal to `raw` when no beta is attached).
    pub rescaled: f64,
    /// Value of the constant test field, an upper bound for `raw`.
    pub upper_bound: f64,
    /// `|N_{(2p)'}((lambda - A) h) - raw| / raw` at the minimizer.
    pub lagrange_gap: f64,
}

/// Discrete minimization for the kernel `(lambda - A)` with generator symbol
/// `symbol` (FFT order), and an optional warm start.
pub fn solve_discrete_rho_symbol(
    grid: TorusGrid,
    symbol: &[f64],
    lambda: f64,
    p: f64,
    bump_width: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<DiscreteRho> {
    if !(p >= 1.0) {
        return Err(invalid(format!("p must be at least 1, got {p}")));
    }
    if !(lambda > 0.0) || symbol.len() != grid.len() {
        return Err(invalid("need lambda > 0 and a symbol matching the grid"));
    }
    let k: Vec<f64> = symbol.iter().map(|s| lambda + s).collect();
    let prob = SphereProblem::new(grid, k.clone(), None, 1.0, p, Constraint::Single);
    let inits = initial_fields(grid, opts, bump_width, true, warm);
    let result = prob
        .solve_many(inits, opts)
        .ok_or_else(|| invalid("every restart failed"))?;
    let raw = result.value;
    let n = grid.len() as f64;
    let upper_bound = lambda * n.powf(1.0 - 1.0 / p);
    let lagrange_gap = if p > 1.0 {
        let kh = TorusFft::new(grid).apply_multiplier(&result.optimizer, &k);
        let r = 2.0 * p / (2.0 * p - 1.0);
        let norm = kahan_sum(kh.iter().map(|x| x.abs().powf(r))).powf(1.0 / r);
        (norm - raw).abs() / raw
    } else {
        0.0
    };
    Ok(DiscreteRho {
        lambda,
        side: grid.side(),
        raw,
        rescaled: raw,
        upper_bound,
        lagrange_gap,
        result,
    })
}

/// `rho(a, R, t)` on the torus of side `round(R beta)` with `lambda = a beta^{-alpha}`.
pub fn solve_discrete_rho(law: &IncrementLaw, a: f64, r: f64, beta: f64, p: f64, opts: &SolveOptions) -> Result<DiscreteRho> {
    solve_discrete_rho_warm(law, a, r, beta, p, None, opts)
}

fn solve_discrete_rho_warm(
    law: &IncrementLaw,
    a: f64,
    r: f64,
    beta: f64,
    p: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<DiscreteRho> {
    if !(a > 0.0) {
        return Err(invalid("a must be positive"));
    }
    let side = discrete_side(r, beta)?;
    let grid = TorusGrid::new(law.dim(), side)?;
    let symbol = law.torus_symbol(side)?;
    let alpha = law.alpha();
    let lambda = a * beta.powf(-alpha);
    let width = beta * (law.sigma() / a).powf(1.0 / alpha) / (2.0 * std::f64::consts::PI);
    let mut out = solve_discrete_rho_symbol(grid, &symbol, lambda, p, width, warm, opts)?;
    let d = law.dim() as f64;
    let inv_q = if p > 1.0 { 1.0 / conjugate(p) } else { 0.0 };
    out.rescaled = out.raw * beta.powf(alpha - d * inv_q);
    Ok(out)
}

/// Same minimization for the kernel of a Green function.
pub fn solve_discrete_rho_kernel(kernel: &GreenKernel, p: f64, opts: &SolveOptions) -> Result<DiscreteRho> {
    let side = kernel.grid().side() as f64;
    solve_discrete_rho_symbol(kernel.grid(), kernel.symbol(), kernel.lambda(), p, side / 4.0, None, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualRho {
    /// `sup <f, G f>` over the unit `l_{(2p)'}` sphere.
    pub rho1: f64,
    pub rho: f64,
    pub duality_gap: f64,
    pub maximizer: Vec<f64>,
    pub iterations: usize,
    pub certified: bool,
    pub restart_values: Vec<f64>,
}

/// Largest side (per axis) for which the dual problem is attempted.
pub fn dual_side_limit(dim: usize) -> usize {
    if dim == 1 {
        16
    } else {
        8
    }
}

/// Dual problem by the nonlinear power method `f <- J(G f)`, where `J` maps
/// `h` to the unit `(2p)'`-norm functional norming it. Each step does not
/// decrease `<f, G f>` since the form is convex.
pub fn solve_dual_rho1(kernel: &GreenKernel, p: f64, opts: &SolveOptions) -> Result<DualRho> {
    let grid = kernel.grid();
    if grid.side() > dual_side_limit(grid.dim()) {
        return Err(invalid(format!(
            "dual problem limited to side {} in dimension {}",
            dual_side_limit(grid.dim()),
            grid.dim()
        )));
    }
    if !(p >= 1.0) {
        return Err(invalid("p must be at least 1"));
    }
    let r = 2.0 * p / (2.0 * p - 1.0);
    let norm_r = |f: &[f64]| kahan_sum(f.iter().map(|x| x.abs().powf(r))).powf(1.0 / r);
    let dual_map = |h: &[f64]| -> Vec<f64> {
        let s = kahan_sum(h.iter().map(|x| x.abs().powf(2.0 * p))).powf((2.0 * p - 1.0) / (2.0 * p));
        h.iter().map(|&x| x.signum() * x.abs().powf(2.0 * p - 1.0) / s).collect()
    };
    let mut inits: Vec<Vec<f64>> = Vec::new();
    for k in 0..opts.restarts as u64 {
        let mut rng = rng_from_seed(replica_seed(opts.seed, k));
        use rand::RngExt;
        inits.push((0..grid.len()).map(|_| rng.random::<f64>() - 0.25).collect());
    }
    inits.push(vec![1.0; grid.len()]);
    let mut delta = vec![0.0; grid.len()];
    delta[0] = 1.0;
    inits.push(delta);

    use rayon::prelude::*;
    let runs: Vec<(f64, Vec<f64>, usize, bool)> = inits
        .par_iter()
        .map(|init| {
            let n = norm_r(init);
            let mut f: Vec<f64> = init.iter().map(|x| x / n).collect();
            let mut value = kernel.quadratic_form(&f);
            for it in 0..opts.max_iter {
                let next = dual_map(&kernel.apply(&f));
                let v = kernel.quadratic_form(&next);
                let change = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                f = next;
                let done = (v - value).abs() <= 1e-15 * v.abs() && change < 1e-10;
                value = v;
                if done {
                    return (value, f, it + 1, true);
                }
            }
            (value, f, opts.max_iter, false)
        })
        .collect();
    let restart_values = runs.iter().map(|r| r.0).collect();
    let mut best = &runs[0];
    for run in &runs[1..] {
        let tie = (run.0 - best.0).abs() <= 1e-12 * best.0.abs();
        if (!tie && run.0 > best.0) || (tie && run.2 < best.2) {
            best = run;
        }
    }
    let primal = solve_discrete_rho_kernel(kernel, p, opts)?;
    Ok(DualRho {
        rho1: best.0,
        rho: primal.raw,
        duality_gap: (best.0 * primal.raw - 1.0).abs(),
        maximizer: best.1.clone(),
        iterations: best.2,
        certified: best.3 && primal.result.certified,
        restart_values,
    })
}

/// Continuum multiplier `h^d (a + sigma |n / L|^alpha)` in FFT order.
fn continuum_symbol(grid: TorusGrid, box_len: f64, a: f64, alpha: f64, sigma: f64) -> Vec<f64> {
    let h = box_len / grid.side() as f64;
    let hd = h.powi(grid.dim() as i32);
    (0..grid.len())
        .map(|i| {
            let f = grid.frequency(i);
            let r2: f64 = f.iter().take(grid.dim()).map(|&x| (x * x) as f64).sum();
            let w = (r2.sqrt() / box_len).powf(alpha);
            hd * (a + sigma * w)
        })
        .collect()
}

fn continuum_weight(grid: TorusGrid, box_len: f64) -> f64 {
    (box_len / grid.side() as f64).powi(grid.dim() as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodicRho {
    pub result: VariationalResult,
    pub resolution: usize,
    /// Relative change when the grid side is doubled (None above the memory cap).
    pub resolution_drift: Option<f64>,
    pub resolution_warning: bool,
}

fn solve_periodic_once(
    dim: usize,
    a: f64,
    r: f64,
    alpha: f64,
    p: f64,
    m: usize,
    sigma: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<VariationalResult> {
    let grid = TorusGrid::new(dim, m)?;
    let k = continuum_symbol(grid, r, a, alpha, sigma);
    let prob = SphereProblem::new(grid, k, None, continuum_weight(grid, r), p, Constraint::Single);
    let width = (sigma / a).powf(1.0 / alpha) / (2.0 * std::f64::consts::PI) * m as f64 / r;
    prob.solve_many(initial_fields(grid, opts, width, true, warm), opts)
        .ok_or_else(|| invalid("every restart failed"))
}

/// `rho(a, R)`: periodic cell `[0, R]^d`, `M^d` samples.
#[allow(clippy::too_many_arguments)]
pub fn solve_periodic_rho(
    dim: usize,
    a: f64,
    r: f64,
    alpha: f64,
    p: f64,
    m: usize,
    sigma: f64,
    opts: &SolveOptions,
) -> Result<PeriodicRho> {
    VariationalProblem {
        flavor: Flavor::PeriodicContinuum,
        dim,
        alpha,
        p,
        a,
        r: Some(r),
        beta: None,
        resolution: Some(m),
        box_len: None,
        sigma,
    }
    .validate()?;
    let result = solve_periodic_once(dim, a, r, alpha, p, m, sigma, None, opts)?;
    let finer = match TorusGrid::new(dim, 2 * m) {
        Ok(_) => {
            let warm = resample_periodic(&result.optimizer, result.grid, 2 * m)?;
            Some(solve_periodic_once(dim, a, r, alpha, p, 2 * m, sigma, Some(&warm), opts)?)
        }
        Err(_) => None,
    };
    let resolution_drift = finer.map(|f| (f.value - result.value).abs() / result.value);
    Ok(PeriodicRho {
        result,
        resolution: m,
        resolution_drift,
        resolution_warning: resolution_drift.is_some_and(|d| d > 0.01),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WholeSpace {
    /// `rho(a)`: `a |g|_2^2 + energy` over `|g|_{2p} = 1`.
    Rho { a: f64 },
    /// `chi`: energy over `|g|_2 = |g|_{2p} = 1`.
    Chi,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WholeSpaceResult {
    pub result: VariationalResult,
    pub box_len: f64,
    pub resolution: usize,
    /// Share of `|g|^{2p}` in the outer eighth of the box (after centering).
    pub boundary_mass: f64,
    pub boundary_ok: bool,
    /// The box was enlarged after a boundary-mass failure.
    pub enlarged: bool,
    /// Relative change between the last two box doublings.
    pub drift: f64,
    pub drift_ok: bool,
    pub doublings: usize,
    /// Relative change at the last grid refinement at fixed box length.
    pub resolution_drift: f64,
    pub refinements: usize,
}

/// Circular shift moving the largest entry to the grid center.
pub fn recenter(values: &[f64], grid: TorusGrid) -> Vec<f64> {
    let imax = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map_or(0, |x| x.0);
    let s = grid.site(imax);
    let c = (grid.side() / 2) as i64;
    let mut out = vec![0.0; values.len()];
    for (i, v) in values.iter().enumerate() {
        let x = grid.site(i);
        let y = [x[0] - s[0] + c, x[1] - s[1] + c, x[2] - s[2] + c];
        out[grid.index_of(&y)] = *v;
    }
    out
}

/// Share of `sum |g|^{2p}` on sites within `side / 8` of the box faces.
pub fn boundary_shell_mass(values: &[f64], grid: TorusGrid, p: f64) -> f64 {
    let band = (grid.side() / 8) as i64;
    let n = grid.side() as i64;
    let mut shell = 0.0;
    let mut total = 0.0;
    for (i, v) in values.iter().enumerate() {
        let m = v.abs().powf(2.0 * p);
        total += m;
        let s = grid.site(i);
        if s.iter().take(grid.dim()).any(|&x| x < band || x >= n - band) {
            shell += m;
        }
    }
    shell / total
}

/// Embeds a field centered in a grid of twice the side (zero padding).
fn embed_centered(values: &[f64], grid: TorusGrid) -> Result<(Vec<f64>, TorusGrid)> {
    let big = TorusGrid::new(grid.dim(), 2 * grid.side())?;
    let off = (grid.side() / 2) as i64;
    let mut out = vec![0.0; big.len()];
    for (i, v) in values.iter().enumerate() {
        let s = grid.site(i);
        let y = [s[0] + off, s[1] + if grid.dim() > 1 { off } else { 0 }, s[2] + if grid.dim() > 2 { off } else { 0 }];
        out[big.index_of(&y)] = *v;
    }
    Ok((out, big))
}

#[allow(clippy::too_many_arguments)]
fn solve_box(
    flavor: WholeSpace,
    dim: usize,
    alpha: f64,
    p: f64,
    box_len: f64,
    m: usize,
    sigma: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<VariationalResult> {
    let grid = TorusGrid::new(dim, m)?;
    let h = box_len / m as f64;
    let (a, constraint, width) = match flavor {
        WholeSpace::Rho { a } => (a, Constraint::Single, (sigma / a).powf(1.0 / alpha) / (2.0 * std::f64::consts::PI)),
        WholeSpace::Chi => (0.0, Constraint::Double, 0.3 * sigma.powf(1.0 / alpha)),
    };
    let k = continuum_symbol(grid, box_len, a, alpha, sigma);
    let prob = SphereProblem::new(grid, k, None, continuum_weight(grid, box_len), p, constraint);
    let include_constant = matches!(flavor, WholeSpace::Rho { .. });
    let mut res = prob
        .solve_many(initial_fields(grid, opts, width / h, include_constant, warm), opts)
        .ok_or_else(|| invalid("every restart failed"))?;
    res.optimizer = recenter(&res.optimizer, grid);
    Ok(res)
}

/// Whole-space problem embedded in the periodic box `[0, L]^d`.
///
/// First `M` is doubled at fixed `L` (at most three times) until the value
/// moves by less than 0.1%, which resolves narrow optimizers. A
/// boundary-mass failure then enlarges the box once (doubling `L` and `M`).
/// Finally `L` and `M` are doubled (at most twice) until the value moves by
/// less than 1%; the finest solution is returned.
#[allow(clippy::too_many_arguments)]
pub fn solve_whole_space(
    flavor: WholeSpace,
    dim: usize,
    alpha: f64,
    p: f64,
    box_len: f64,
    m: usize,
    sigma: f64,
    opts: &SolveOptions,
) -> Result<WholeSpaceResult> {
    let a = match flavor {
        WholeSpace::Rho { a } => a,
        WholeSpace::Chi => 1.0,
    };
    VariationalProblem {
        flavor: Flavor::WholeSpace,
        dim,
        alpha,
        p,
        a,
        r: None,
        beta: None,
        resolution: Some(m),
        box_len: Some(box_len),
        sigma,
    }
    .validate()?;
    let mut l = box_len;
    let mut m = m;
    let mut res = solve_box(flavor, dim, alpha, p, l, m, sigma, None, opts)?;
    let mut resolution_drift = f64::NAN;
    let mut refinements = 0;
    while refinements < 3 && TorusGrid::new(dim, 2 * m).is_ok() {
        let warm = resample_periodic(&res.optimizer, res.grid, 2 * m)?;
        let next = solve_box(flavor, dim, alpha, p, l, 2 * m, sigma, Some(&warm), opts)?;
        resolution_drift = (next.value - res.value).abs() / res.value;
        m *= 2;
        res = next;
        refinements += 1;
        if resolution_drift < 1e-3 {
            break;
        }
    }
    let mut shell = boundary_shell_mass(&res.optimizer, res.grid, p);
    let mut enlarged = false;
    if shell >= 1e-4 {
        if let Ok((warm, _)) = embed_centered(&res.optimizer, res.grid) {
            enlarged = true;
            l *= 2.0;
            m *= 2;
            res = solve_box(flavor, dim, alpha, p, l, m, sigma, Some(&warm), opts)?;
            shell = boundary_shell_mass(&res.optimizer, res.grid, p);
        }
    }
    let mut drift = f64::NAN;
    let mut doublings = 0;
    while doublings < 2 {
        let Ok((warm, _)) = embed_centered(&res.optimizer, res.grid) else {
            break;
        };
        let next = solve_box(flavor, dim, alpha, p, 2.0 * l, 2 * m, sigma, Some(&warm), opts)?;
        drift = (next.value - res.value).abs() / res.value;
        l *= 2.0;
        m *= 2;
        res = next;
        shell = boundary_shell_mass(&res.optimizer, res.grid, p);
        doublings += 1;
        if drift < 0.01 {
            break;
        }
    }
    Ok(WholeSpaceResult {
        box_len: l,
        resolution: m,
        boundary_mass: shell,
        boundary_ok: shell < 1e-4,
        enlarged,
        drift_ok: drift < 0.01,
        drift,
        doublings,
        resolution_drift,
        refinements,
        result: res,
    })
}

/// Scale-invariant form of the whole-space constant:
/// `c |g|_2^{2(1 - d/aq)} E(g)^{d/aq} / |g|_{2p}^2` with `aq = alpha q` and
/// `c = (aq/(aq - d)) ((aq - d)/d)^{d/aq}`; its infimum is `rho` at `a = 1`.
pub fn scale_invariant_rho(values: &[f64], grid: TorusGrid, box_len: f64, alpha: f64, p: f64, sigma: f64) -> f64 {
    let d = grid.dim() as f64;
    let aq = alpha * conjugate(p);
    let w = continuum_weight(grid, box_len);
    let k = continuum_symbol(grid, box_len, 0.0, alpha, sigma);
    let c = TorusFft::new(grid).forward_real(values);
    let energy = kahan_sum(c.iter().zip(&k).map(|(c, k)| c.norm_sqr() * k)) / grid.len() as f64;
    let l2 = w * kahan_sum(values.iter().map(|x| x * x));
    let l2p = (w * kahan_sum(values.iter().map(|x| x.abs().powf(2.0 * p)))).powf(1.0 / p);
    let pre = aq / (aq - d) * ((aq - d) / d).powf(d / aq);
    pre * l2.powf(1.0 - d / aq) * energy.powf(d / aq) / l2p
}

/// Both constants for one `(alpha, d, p, sigma)`, computed independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRecord {
    pub alpha: f64,
    pub dim: usize,
    pub p: f64,
    pub sigma: f64,
    pub chi: f64,
    /// Whole-space `rho(1)`.
    pub rho: f64,
    /// `rho` predicted from `chi`.
    pub rho_from_chi: f64,
    pub relation_gap: f64,
    pub box_len: f64,
    pub resolution: usize,
    pub chi_certified: bool,
    pub rho_certified: bool,
    pub chi_drift: f64,
    pub rho_drift: f64,
    pub boundary_ok: bool,
}

pub fn compute_constants(
    dim: usize,
    alpha: f64,
    p: f64,
    sigma: f64,
    box_len: f64,
    m: usize,
    opts: &SolveOptions,
) -> Result<ConstantsRecord> {
    let chi = solve_whole_space(WholeSpace::Chi, dim, alpha, p, box_len, m, sigma, opts)?;
    let rho = solve_whole_space(WholeSpace::Rho { a: 1.0 }, dim, alpha, p, box_len, m, sigma, opts)?;
    let predicted = rho_from_chi(dim, alpha, p, chi.result.value);
    Ok(ConstantsRecord {
        alpha,
        dim,
        p,
        sigma,
        chi: chi.result.value,
        rho: rho.result.value,
        rho_from_chi: predicted,
        relation_gap: (predicted - rho.result.value).abs() / rho.result.value,
        box_len: rho.box_len,
        resolution: rho.resolution,
        chi_certified: chi.result.certified,
        rho_certified: rho.result.certified,
        chi_drift: chi.drift,
        rho_drift: rho.drift,
        boundary_ok: chi.boundary_ok && rho.boundary_ok,
    })
}

/// Constants registry persisted as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRegistry {
    /// Hash of the config that produced the entries, when written by a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub entries: Vec<ConstantsRecord>,
}

impl ConstantsRegistry {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Replaces any record with the same `(alpha, d, p, sigma)`.
    pub fn insert(&mut self, rec: ConstantsRecord) {
        self.entries
            .retain(|e| !(e.alpha == rec.alpha && e.dim == rec.dim && e.p == rec.p && e.sigma == rec.sigma));
        self.entries.push(rec);
    }

    pub fn lookup(&self, dim: usize, alpha: f64, p: f64, sigma: f64) -> Option<&ConstantsRecord> {
        self.entries
            .iter()
            .find(|e| e.alpha == alpha && e.dim == dim && e.p == p && e.sigma == sigma)
    }
}

/// Fit of `log rho(a)` against `log a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub a: Vec<f64>,
    pub rho: Vec<f64>,
    pub slope: f64,
    pub expected: f64,
}

pub fn rho_power_law(
    dim: usize,
    alpha: f64,
    p: f64,
    sigma: f64,
    a_values: &[f64],
    box_len: f64,
    m: usize,
    opts: &SolveOptions,
) -> Result<PowerLawFit> {
    let mut rho = Vec::with_capacity(a_values.len());
    for &a in a_values {
        rho.push(solve_whole_space(WholeSpace::Rho { a }, dim, alpha, p, box_len, m, sigma, opts)?.result.value);
    }
    let fit = linear_fit(
        &a_values.iter().map(|a| a.ln()).collect::<Vec<_>>(),
        &rho.iter().map(|r| r.ln()).collect::<Vec<_>>(),
    );
    Ok(PowerLawFit {
        a: a_values.to_vec(),
        rho,
        slope: fit.slope,
        expected: 1.0 - dim as f64 / (alpha * conjugate(p)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub beta: f64,
    pub side: usize,
    pub raw: f64,
    pub rescaled: f64,
    /// `a R^{d/q}`, the constant-field bound in rescaled form.
    pub upper_bound: f64,
    pub gap: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceScan {
    pub rows: Vec<ScanRow>,
    /// Periodic `rho(a, R)` with the law's energy weight.
    pub reference: f64,
    pub sigma: f64,
    pub final_gap: f64,
    /// Gaps strictly decrease over the last three betas.
    pub tail_decreasing: bool,
}

/// Rescaled discrete values `beta^{alpha - d/q} rho(a, R, t)` against the
/// periodic limit with the law's energy weight.
pub fn convergence_scan_discrete_to_periodic(
    law: &IncrementLaw,
    a: f64,
    r: f64,
    p: f64,
    betas: &[f64],
    m: usize,
    opts: &SolveOptions,
) -> Result<ConvergenceScan> {
    if betas.windows(2).any(|w| w[1] <= w[0]) || betas.is_empty() {
        return Err(invalid("beta list must be nonempty and increasing"));
    }
    for &b in betas {
        let side = discrete_side(r, b)?;
        TorusGrid::new(law.dim(), side)?;
    }
    let sigma = law.sigma();
    let (dim, alpha) = (law.dim(), law.alpha());
    let periodic = solve_periodic_once(dim, a, r, alpha, p, m, sigma, None, opts)?;
    let reference = periodic.value;
    let d = dim as f64;
    let bound = a * r.powf(d / conjugate(p));
    let mut rows = Vec::new();
    for &beta in betas {
        let side = discrete_side(r, beta)?;
        // Warm start: the periodic optimizer sampled on the torus sites.
        let warm = resample_periodic(&periodic.optimizer, periodic.grid, side)?;
        let res = solve_discrete_rho_warm(law, a, r, beta, p, Some(&warm), opts)?;
        rows.push(ScanRow {
            beta,
            side,
            raw: res.raw,
            rescaled: res.rescaled,
            upper_bound: bound,
            gap: (res.rescaled - reference).abs() / reference,
            certified: res.result.certified,
        });
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let tail = &gaps[gaps.len().saturating_sub(3)..];
    Ok(ConvergenceScan {
        final_gap: *gaps.last().unwrap(),
        tail_decreasing: tail.len() == 3 && tail.windows(2).all(|w| w[1] < w[0]),
        rows,
        reference,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_rho_relation_round_trips() {
        for &(d, alpha, p) in &[(1, 2.0, 2.0), (1, 1.0, 3.0), (2, 2.0, 1.5)] {
            let rho = rho_from_chi(d, alpha, p, 0.7);
            assert!((chi_from_rho(d, alpha, p, rho) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn subcriticality_guard() {
        assert!(check_subcritical(1, 2.0, 2.0).is_ok());
        assert!(matches!(check_subcritical(2, 1.0, 2.0), Err(Error::NotSubcritical { .. })));
        assert!(check_subcritical(1, 2.0, 1.0).is_err());
    }

    #[test]
    fn odd_torus_side_rejected() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        assert!(solve_discrete_rho(&law, 1.0, 3.0, 1.0, 2.0, &SolveOptions::default()).is_err());
    }

    fn quick() -> SolveOptions {
        SolveOptions { restarts: 4, ..Default::default() }
    }

    #[test]
    fn two_site_minimum_matches_angle_sweep() {
        // lambda (h0^2 + h1^2) + (h0 - h1)^2 on h0^4 + h1^4 = 1 for the
        // nearest-neighbor law on the torus of side 2, where the generator
        // symbol is 1 - cos(pi n) and the form is <h, (1 - F) h> = (h0 - h1)^2.
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let res = solve_discrete_rho(&law, 1.0, 2.0, 1.0, 2.0, &quick()).unwrap();
        let mut best = f64::INFINITY;
        let n = 1_000_000;
        for k in 0..n {
            let t = std::f64::consts::PI * k as f64 / n as f64;
            let (c, s) = (t.cos(), t.sin());
            let scale = (c.powi(4) + s.powi(4)).powf(-0.25);
            let (h0, h1) = (c * scale, s * scale);
            best = best.min(h0 * h0 + h1 * h1 + (h0 - h1).powi(2));
        }
        assert!((res.raw - best).abs() < 1e-6, "{} vs {}", res.raw, best);
        assert!(res.result.certified);
    }

    #[test]
    fn discrete_rho_respects_constant_field_bound_and_constraint() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let res = solve_discrete_rho(&law, 1.0, 8.0, 8.0, 2.0, &quick()).unwrap();
        let n = 64.0f64;
        assert!(res.raw <= 8f64.powf(-2.0) * n.sqrt() * (1.0 + 1e-12));
        assert!((res.upper_bound - n.sqrt() / 64.0).abs() < 1e-15);
        let c: f64 = res.result.optimizer.iter().map(|x| x.powi(4)).sum();
        assert!((c - 1.0).abs() < 1e-10);
        assert!(res.result.certified);
        assert!(res.lagrange_gap < 1e-6);
    }

    #[test]
    fn objective_in_space_and_fourier_agree() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let res = solve_discrete_rho(&law, 1.0, 8.0, 4.0, 2.0, &quick()).unwrap();
        let h = &res.result.optimizer;
        let form = crate::walk_kernel::quadratic_form(&law, 32, h).unwrap();
        let gen = crate::walk_kernel::TorusGenerator::new(&law, 32).unwrap();
        let space = res.lambda * h.iter().map(|x| x * x).sum::<f64>() + gen.quadratic_form_space(h);
        let fourier = res.lambda * h.iter().map(|x| x * x).sum::<f64>() + form;
        assert!((space - fourier).abs() < 1e-10);
        assert!((fourier - res.raw).abs() < 1e-12);
    }

    #[test]
    fn discrete_rho_monotone_in_a() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let vals: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&a| solve_discrete_rho(&law, a, 8.0, 4.0, 2.0, &quick()).unwrap().raw)
            .collect();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn quadratic_case_is_smallest_eigenvalue() {
        // p = 1: the minimum is lambda + min symbol = lambda, and the dual
        // supremum is the largest eigenvalue 1/lambda of G.
        let law = IncrementLaw::finite_range(1).unwrap();
        let kernel = GreenKernel::new(&law, 8, 0.3).unwrap();
        let dual = solve_dual_rho1(&kernel, 1.0, &quick()).unwrap();
        assert!((dual.rho - 0.3).abs() < 1e-10);
        assert!((dual.rho1 * dual.rho - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dual_value_dominates_random_functionals() {
        use rand::RngExt;
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let kernel = GreenKernel::new(&law, 4, 1.0).unwrap();
        let dual = solve_dual_rho1(&kernel, 2.0, &quick()).unwrap();
        assert!(dual.duality_gap < 1e-3, "{dual:?}");
        let r = 4.0 / 3.0;
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let f: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let n = f.iter().map(|x: &f64| x.abs().powf(r)).sum::<f64>().powf(1.0 / r);
            let f: Vec<f64> = f.iter().map(|x| x / n).collect();
            assert!(kernel.quadratic_form(&f) <= dual.rho1 + 1e-12);
        }
    }

    #[test]
    fn dual_matches_dense_brute_force() {
        // Oracle: maximize <f, G f> over the unit 4/3-sphere of R^4 with the
        // dense kernel matrix by random search plus coordinate refinement.
        use rand::RngExt;
        let law = IncrementLaw::finite_range(1).unwrap();
        let kernel = GreenKernel::new(&law, 4, 0.5).unwrap();
        let g = kernel.dense();
        let r = 4.0 / 3.0;
        let eval = |f: &[f64]| {
            let n = f.iter().map(|x| x.abs().powf(r)).sum::<f64>().powf(1.0 / r);
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    s += f[i] * g[i * 4 + j] * f[j];
                }
            }
            s / (n * n)
        };
        let mut rng = rng_from_seed(11);
        let mut best = vec![1.0, 0.0, 0.0, 0.0];
        let mut bv = eval(&best);
        for _ in 0..20_000 {
            let f: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let v = eval(&f);
            if v > bv {
                bv = v;
                best = f;
            }
        }
        let mut step = 0.1;
        while step > 1e-9 {
            let mut improved = false;
            for i in 0..4 {
                for s in [step, -step] {
                    let mut f = best.clone();
                    f[i] += s;
                    let v = eval(&f);
                    if v > bv {
                        bv = v;
                        best = f;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let dual = solve_dual_rho1(&kernel, 2.0, &quick()).unwrap();
        assert!((dual.rho1 - bv).abs() < 1e-8 * bv, "{} vs {}", dual.rho1, bv);
    }

    #[test]
    fn chi_matches_sharp_gagliardo_nirenberg_constant() {
        // |g|_4^4 <= 3^{-1/2} |g|_2^3 |g'|_2 is sharp (equality for sech), so
        // with |omega|^2 |F g|^2 = |g'|^2 / (4 pi^2) the constant is 3/(4 pi^2).
        let res = solve_whole_space(WholeSpace::Chi, 1, 2.0, 2.0, 8.0, 256, 1.0, &quick()).unwrap();
        let exact = 3.0 / (4.0 * std::f64::consts::PI.powi(2));
        assert!((res.result.value - exact).abs() < 1e-9, "{}", res.result.value);
        assert!(res.result.certified && res.boundary_ok && res.drift_ok);
        let g = &res.result.optimizer;
        let h = res.box_len / res.resolution as f64;
        assert!((h * g.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((h * g.iter().map(|x| x.powi(4)).sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chi_is_linear_in_energy_weight() {
        let one = solve_whole_space(WholeSpace::Chi, 1, 1.5, 2.0, 16.0, 256, 1.0, &quick()).unwrap();
        let two = solve_whole_space(WholeSpace::Chi, 1, 1.5, 2.0, 16.0, 256, 2.0, &quick()).unwrap();
        assert!((two.result.value / one.result.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn whole_space_rho_matches_chi_relation() {
        for &alpha in &[2.0, 1.5] {
            let rec = compute_constants(1, alpha, 2.0, 1.0, 16.0, 512, &quick()).unwrap();
            assert!(rec.relation_gap < 0.02, "{rec:?}");
        }
    }

    #[test]
    fn rho_scales_as_power_of_a() {
        let fit = rho_power_law(1, 2.0, 2.0, 1.0, &[0.5, 1.0, 2.0], 8.0, 256, &quick()).unwrap();
        assert!((fit.slope - fit.expected).abs() < 0.02 * fit.expected.abs());
    }

    #[test]
    fn scale_invariant_form_is_dilation_invariant_at_optimizer() {
        let res = solve_whole_space(WholeSpace::Rho { a: 1.0 }, 1, 2.0, 2.0, 8.0, 256, 1.0, &quick()).unwrap();
        let (grid, l) = (res.result.grid, res.box_len);
        let g = &res.result.optimizer;
        let base = scale_invariant_rho(g, grid, l, 2.0, 2.0, 1.0);
        assert!((base - res.result.value).abs() < 1e-6 * base);
        // Dilation about the center, evaluating the trigonometric interpolant
        // of the optimizer at the stretched points.
        let m = grid.side();
        let c = TorusFft::new(grid).forward_real(g);
        let h = l / m as f64;
        let center = (m / 2) as f64 * h;
        let interp = |x: f64| -> f64 {
            let mut s = 0.0;
            for (k, ck) in c.iter().enumerate() {
                let n = grid.frequency(k)[0] as f64;
                let ph = 2.0 * std::f64::consts::PI * n * x / l;
                s += ck.re * ph.cos() - ck.im * ph.sin();
            }
            s / m as f64
        };
        for &lam in &[0.8f64, 1.25] {
            let d: Vec<f64> = (0..m)
                .map(|i| lam.powf(1.0 / 4.0) * interp(center + lam * (i as f64 * h - center)))
                .collect();
            let v = scale_invariant_rho(&d, grid, l, 2.0, 2.0, 1.0);
            assert!((v - base).abs() < 0.01 * base, "{lam}: {v} vs {base}");
        }
    }

    #[test]
    fn periodic_values_self_converge_and_approach_whole_space() {
        let a = solve_periodic_rho(1, 1.0, 8.0, 2.0, 2.0, 128, 1.0, &quick()).unwrap();
        let b = solve_periodic_rho(1, 1.0, 8.0, 2.0, 2.0, 256, 1.0, &quick()).unwrap();
        assert!((a.result.value - b.result.value).abs() < 0.003 * b.result.value);
        let ws = solve_whole_space(WholeSpace::Rho { a: 1.0 }, 1, 2.0, 2.0, 8.0, 256, 1.0, &quick()).unwrap();
        let per = solve_periodic_rho(1, 1.0, 32.0, 2.0, 2.0, 1024, 1.0, &quick()).unwrap();
        assert!((per.result.value - ws.result.value).abs() < 0.05 * ws.result.value);
        // The constant field is feasible with value a R^{d/q}.
        assert!(b.result.value <= 8f64.sqrt());
    }

    #[test]
    fn tilted_eigenvalue_edge_cases() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let zero = tilted_principal_eigenvalue(&law, Profile::Zero, 4.0, 32, &quick()).unwrap();
        assert!(zero.eigenvalue.abs() < 1e-12);
        let well = tilted_principal_eigenvalue(&law, Profile::NegativeWell { depth: 2.0, radius: 1.0 }, 4.0, 32, &quick()).unwrap();
        assert!(well.eigenvalue <= 0.0);
        assert!(well.eigenvalue >= well.sup_form - 1e-8);
        assert!(well.rel_gap < 0.01);
    }

    #[test]
    fn tilted_eigenvalue_matches_dense_oracle() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let (side, beta) = (24, 3.0);
        let prof = Profile::Bump { height: 1.5, radius: 2.0 };
        let res = tilted_principal_eigenvalue(&law, prof, beta, side, &quick()).unwrap();
        let kernel = GreenKernel::new(&law, side, 1.0).unwrap();
        // Dense generator from the Green matrix: A = lambda - G^{-1}.
        let g = nalgebra::DMatrix::from_row_slice(side, side, &kernel.dense());
        let inv = g.try_inverse().unwrap();
        let grid = TorusGrid::new(1, side).unwrap();
        let mut h = nalgebra::DMatrix::identity(side, side) - inv;
        for i in 0..side {
            let y = grid.centered(i)[0] as f64 / beta;
            h[(i, i)] += beta.powf(-2.0) * prof.eval(&[y]);
        }
        let top = nalgebra::SymmetricEigen::new(h).eigenvalues.max();
        assert!((res.eigenvalue - top).abs() < 1e-9, "{} vs {}", res.eigenvalue, top);
    }

    #[test]
    fn singular_form_constant_matches_fourier_integral() {
        // int 4 sin^2(pi z) / z^2 dz = 4 pi^2 in d = 1, alpha = 1, so the
        // spectral energy is the double integral divided by 4 pi^2.
        let exact = 1.0 / (4.0 * std::f64::consts::PI.powi(2));
        let (l, mut ratios) = (16.0, Vec::new());
        for &(m, w) in &[(256usize, 1.0), (512, 1.0), (512, 0.7), (512, 1.3)] {
            let h = l / m as f64;
            let g: Vec<f64> = (0..m)
                .map(|i| {
                    let x = (i as f64 + 0.5) * h - l / 2.0;
                    (-x * x / (2.0 * w * w)).exp()
                })
                .collect();
            ratios.push(singular_integral_crosscheck(&g, 1, 1.0, l, m).unwrap().ratio);
        }
        for r in &ratios {
            assert!((r - exact).abs() < 0.02 * exact);
            assert!((r - ratios[0]).abs() < 0.02 * ratios[0]);
        }
        let zero = singular_integral_crosscheck(&vec![0.0; 64], 1, 1.0, l, 64).unwrap();
        assert_eq!(zero.spectral_energy, 0.0);
        assert_eq!(zero.singular_integral_energy, 0.0);
        assert!(singular_integral_crosscheck(&vec![0.0; 64], 1, 2.0, l, 64).is_err());
    }

    #[test]
    fn recenter_moves_peak_to_center() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let v = vec![3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        let c = recenter(&v, grid);
        assert_eq!(c, vec![0.0, 0.0, 0.0, 2.0, 3.0, 1.0, 0.0, 0.0]);
    }
}
