//! Descent on norm spheres for quadratic energies.
//!
//! The energy is `Q(g) = <g, K g>` where `K` is a real Fourier multiplier
//! `k(n)` plus an optional diagonal potential. The constraint is either
//! `w sum |g|^{2p} = 1` (single) or `w sum g^2 = w sum |g|^{2p} = 1` (double),
//! with `w` a quadrature weight.

use num_complex::Complex64;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::kahan_sum;
use crate::torus_fourier::{TorusFft, TorusGrid};
use crate::walk_simulator::{replica_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Relative stationarity residual that certifies a run.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of random initial fields, on top of the structured ones.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Constraint {
    Single,
    Double,
}

/// Outcome of one descent run.
#[derive(Clone, Debug)]
pub(crate) struct Run {
    pub g: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Result of a constrained minimization, best over all restarts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalResult {
    pub value: f64,
    pub grid: TorusGrid,
    pub optimizer: Vec<f64>,
    pub iterations: usize,
    /// Relative Euler-Lagrange residual of the optimizer.
    pub residual: f64,
    pub restarts: usize,
    /// The winning run met the residual tolerance within the iteration cap.
    pub certified: bool,
    /// Final value of every restart, in launch order (NaN for failed runs).
    pub restart_values: Vec<f64>,
    /// Share of `sum |g|^{2p}` carried by negative entries (sign pattern).
    pub negative_fraction: f64,
}

pub(crate) struct SphereProblem {
    pub grid: TorusGrid,
    fft: TorusFft,
    pub k: Vec<f64>,
    pub potential: Option<Vec<f64>>,
    pub weight: f64,
    pub p: f64,
    pub constraint: Constraint,
    k_max: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl SphereProblem {
    pub fn new(
        grid: TorusGrid,
        k: Vec<f64>,
        potential: Option<Vec<f64>>,
        weight: f64,
        p: f64,
        constraint: Constraint,
    ) -> Self {
        let k_max = k.iter().copied().fold(0.0, f64::max);
        Self {
            grid,
            fft: TorusFft::new(grid),
            k,
            potential,
            weight,
            p,
            constraint,
            k_max,
        }
    }

    /// `Q(g)` and `K g`.
    pub fn energy(&self, g: &[f64]) -> (f64, Vec<f64>) {
        let c = self.fft.forward_real(g);
        let n = self.grid.len() as f64;
        let mut q = kahan_sum(c.iter().zip(&self.k).map(|(c, k)| c.norm_sqr() * k)) / n;
        let mut kg = self
            .fft
            .inverse_real(c.iter().zip(&self.k).map(|(c, k)| c * k).collect());
        if let Some(v) = &self.potential {
            q += kahan_sum(g.iter().zip(v).map(|(x, v)| v * x * x));
            for ((o, x), v) in kg.iter_mut().zip(g).zip(v) {
                *o += v * x;
            }
        }
        (q, kg)
    }

    pub fn value(&self, g: &[f64]) -> f64 {
        self.energy(g).0
    }

    /// `|x|^{2p-2} x`.
    fn odd_power(&self, x: f64) -> f64 {
        if self.p == 1.0 {
            x
        } else if self.p == 2.0 {
            x * x * x
        } else {
            x.abs().powf(2.0 * self.p - 2.0) * x
        }
    }

    fn abs_power(&self, x: f64) -> f64 {
        if self.p == 1.0 {
            x * x
        } else if self.p == 2.0 {
            let y = x * x;
            y * y
        } else {
            x.abs().powf(2.0 * self.p)
        }
    }

    /// `w sum |g|^{2p}`.
    pub fn power_sum(&self, g: &[f64]) -> f64 {
        self.weight * kahan_sum(g.iter().map(|&x| self.abs_power(x)))
    }

    pub fn l2_sum(&self, g: &[f64]) -> f64 {
        self.weight * kahan_sum(g.iter().map(|x| x * x))
    }

    fn normalize_single(&self, g: &mut [f64]) -> bool {
        let c = self.power_sum(g);
        if !(c > 0.0) || !c.is_finite() {
            return false;
        }
        let s = c.powf(-1.0 / (2.0 * self.p));
        for x in g.iter_mut() {
            *x *= s;
        }
        true
    }

    /// Maps `y` onto `{w sum g^2 = 1, w sum |g|^{2p} = 1}` as
    /// `(y + s u) / |y + s u|_2` with `u = |y|^{2p-2} y` and `s` a root of
    /// `w sum |y + s u|^{2p} = (w sum (y + s u)^2)^p`.
    fn retract_double(&self, y: &[f64]) -> Option<Vec<f64>> {
        let u: Vec<f64> = y.iter().map(|&x| self.odd_power(x)).collect();
        let phi = |s: f64| -> f64 {
            let z: Vec<f64> = y.iter().zip(&u).map(|(a, b)| a + s * b).collect();
            self.power_sum(&z).ln() - self.p * self.l2_sum(&z).ln()
        };
        // Size the initial bracket from the scale of `u` relative to `y`.
        let scale = norm2(y) / norm2(&u).max(f64::MIN_POSITIVE);
        let f0 = phi(0.0);
        if !f0.is_finite() {
            return None;
        }
        let s = if f0.abs() < 1e-15 {
            0.0
        } else {
            let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
            let mut lo = 0.0;
            let mut flo = f0;
            let mut step = 1e-3 * scale;
            let mut hi = dir * step;
            let mut fhi = phi(hi);
            let mut tries = 0;
            while fhi.is_finite() && fhi.signum() == flo.signum() {
                lo = hi;
                flo = fhi;
                step *= 2.0;
                hi = dir * step;
                fhi = phi(hi);
                tries += 1;
                if tries > 60 {
                    return None;
                }
            }
            if !fhi.is_finite() {
                return None;
            }
            // Illinois false position.
            let (mut a, mut fa, mut b, mut fb) = (lo, flo, hi, fhi);
            let mut side = 0;
            let mut root = b;
            for _ in 0..200 {
                let c = (a * fb - b * fa) / (fb - fa);
                let fc = phi(c);
                root = c;
                if fc.abs() < 1e-15 || (b - a).abs() < 1e-16 * scale {
                    break;
                }
                if fc.signum() == fb.signum() {
                    b = c;
                    fb = fc;
                    if side == -1 {
                        fa /= 2.0;
                    }
                    side = -1;
                } else {
                    a = c;
                    fa = fc;
                    if side == 1 {
                        fb /= 2.0;
                    }
                    side = 1;
                }
            }
            root
        };
        let mut z: Vec<f64> = y.iter().zip(&u).map(|(a, b)| a + s * b).collect();
        let l2 = self.l2_sum(&z);
        if !(l2 > 0.0) {
            return None;
        }
        let c = l2.powf(-0.5);
        for x in z.iter_mut() {
            *x *= c;
        }
        let err = (self.power_sum(&z) - 1.0).abs();
        (err < 1e-11).then_some(z)
    }

    fn project(&self, y: &[f64]) -> Option<Vec<f64>> {
        let mut g = y.to_vec();
        match self.constraint {
            Constraint::Single => self.normalize_single(&mut g).then_some(g),
            Constraint::Double => self.retract_double(&g),
        }
    }

    /// Constraint normals, scaled by the weight.
    fn normals(&self, g: &[f64]) -> Vec<Vec<f64>> {
        let w = self.weight;
        let u: Vec<f64> = g.iter().map(|&x| w * self.odd_power(x)).collect();
        match self.constraint {
            Constraint::Single => vec![u],
            Constraint::Double => vec![g.iter().map(|x| w * x).collect(), u],
        }
    }

    /// Least-squares coefficients of `v` on the span of `normals`.
    fn normal_coefficients(normals: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        match normals.len() {
            1 => vec![dot(&normals[0], v) / dot(&normals[0], &normals[0])],
            _ => {
                let (a, b) = (&normals[0], &normals[1]);
                let (aa, ab, bb) = (dot(a, a), dot(a, b), dot(b, b));
                let (av, bv) = (dot(a, v), dot(b, v));
                let det = aa * bb - ab * ab;
                if det.abs() <= 1e-14 * aa * bb {
                    // Parallel normals (|g| constant on its support).
                    vec![av / aa, 0.0]
                } else {
                    vec![(av * bb - bv * ab) / det, (bv * aa - av * ab) / det]
                }
            }
        }
    }

    /// Half gradient of the energy restricted to the constraint set, and the
    /// Lagrange multipliers.
    fn tangent_gradient(&self, g: &[f64], q: f64, kg: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let normals = self.normals(g);
        let mult = match self.constraint {
            // On the sphere the multiplier is exactly `Q`.
            Constraint::Single => vec![q],
            Constraint::Double => Self::normal_coefficients(&normals, kg),
        };
        let mut grad = kg.to_vec();
        for (n, m) in normals.iter().zip(&mult) {
            for (o, x) in grad.iter_mut().zip(n) {
                *o -= m * x;
            }
        }
        (grad, mult)
    }

    pub fn residual(&self, g: &[f64]) -> f64 {
        let (q, kg) = self.energy(g);
        let (grad, mult) = self.tangent_gradient(g, q, &kg);
        let normals = self.normals(g);
        let scale = norm2(&kg)
            + normals
                .iter()
                .zip(&mult)
                .map(|(n, m)| m.abs() * norm2(n))
                .sum::<f64>();
        norm2(&grad) / scale.max(f64::MIN_POSITIVE)
    }

    fn precondition(&self, grad: &[f64], shift: f64) -> Vec<f64> {
        let sym: Vec<f64> = self.k.iter().map(|k| 1.0 / (k + shift)).collect();
        self.fft.apply_multiplier(grad, &sym)
    }

    fn shift(&self, g: &[f64], mult: &[f64]) -> f64 {
        let w = self.weight;
        let n = g.len() as f64;
        let mean_pow = if self.p == 1.0 {
            1.0
        } else {
            kahan_sum(g.iter().map(|x| x.abs().powf(2.0 * self.p - 2.0))) / n
        };
        let mut s = match self.constraint {
            Constraint::Single => w * mult[0].abs() * mean_pow,
            Constraint::Double => w * (mult[0].abs() + mult[1].abs() * mean_pow),
        };
        if let Some(v) = &self.potential {
            s += v.iter().copied().fold(0.0, |a: f64, b| a.max(-b));
        }
        s.max(1e-12 * self.k_max).max(f64::MIN_POSITIVE)
    }

    /// Projection of an arbitrary initial field. For the double constraint,
    /// fields too spread out to reach the sphere intersection along the
    /// retraction path are concentrated by odd powers first; fields too
    /// concentrated are flattened by adding a constant.
    fn project_initial(&self, init: &[f64]) -> Option<Vec<f64>> {
        if self.constraint == Constraint::Single {
            return self.project(init);
        }
        let mut y = init.to_vec();
        for _ in 0..40 {
            if let Some(g) = self.retract_double(&y) {
                return Some(g);
            }
            let ratio = self.power_sum(&y) / self.l2_sum(&y).powf(self.p);
            if !ratio.is_finite() {
                return None;
            }
            if ratio < 1.0 {
                y = y.iter().map(|&x| self.odd_power(x)).collect();
                let m = y.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
                for x in y.iter_mut() {
                    *x /= m;
                }
            } else {
                let m = y.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
                for x in y.iter_mut() {
                    *x += 0.5 * m;
                }
            }
        }
        None
    }

    fn tangent(&self, normals: &[Vec<f64>], v: &mut [f64]) {
        if self.constraint == Constraint::Double {
            let c = Self::normal_coefficients(normals, v);
            for (n, m) in normals.iter().zip(&c) {
                for (o, x) in v.iter_mut().zip(n) {
                    *o -= m * x;
                }
            }
        }
    }

    /// Preconditioned nonlinear conjugate gradients (Polak-Ribiere+) on the
    /// constraint set, with a parabolic line search along the retraction and
    /// Armijo backtracking as fallback.
    pub fn descend(&self, init: &[f64], tol: f64, max_iter: usize) -> Option<Run> {
        let mut g = self.project_initial(init)?;
        let (mut q, mut kg) = self.energy(&g);
        let mut step: f64 = 1.0;
        let mut residual = f64::INFINITY;
        let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        let done = |g: Vec<f64>, value: f64, iterations: usize, residual: f64, converged: bool| Run {
            g,
            value,
            iterations,
            residual,
            converged,
        };
        for it in 0..max_iter {
            let (grad, mult) = self.tangent_gradient(&g, q, &kg);
            let normals = self.normals(&g);
            let scale = norm2(&kg)
                + normals
                    .iter()
                    .zip(&mult)
                    .map(|(n, m)| m.abs() * norm2(n))
                    .sum::<f64>();
            residual = norm2(&grad) / scale.max(f64::MIN_POSITIVE);
            if residual < tol {
                return Some(done(g, q, it, residual, true));
            }
            let mut pg = self.precondition(&grad, self.shift(&g, &mult));
            self.tangent(&normals, &mut pg);
            let mut dir: Vec<f64> = pg.iter().map(|x| -x).collect();
            if let Some((gp, pgp, dp)) = &prev {
                let num: f64 = dot(&grad, &pg) - dot(gp, &pg);
                let den = dot(gp, pgp);
                let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
                if beta > 0.0 {
                    for (o, d) in dir.iter_mut().zip(dp) {
                        *o += beta * d;
                    }
                    self.tangent(&normals, &mut dir);
                }
            }
            let mut slope = dot(&grad, &dir);
            if !(slope < 0.0) {
                dir = pg.iter().map(|x| -x).collect();
                slope = dot(&grad, &dir);
                if !(slope < 0.0) {
                    return Some(done(g, q, it, residual, false));
                }
            }
            let d0 = 2.0 * slope;
            let slack = 8.0 * f64::EPSILON * q.abs();
            let trial = |t: f64| -> Option<(Vec<f64>, f64, Vec<f64>)> {
                let y: Vec<f64> = g.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let cand = self.project(&y)?;
                let (qc, kc) = self.energy(&cand);
                qc.is_finite().then_some((cand, qc, kc))
            };
            let armijo = |t: f64, qc: f64| qc <= q + 1e-4 * t * d0 + slack;
            let mut t1 = step.clamp(1e-12, 16.0);
            let mut first = trial(t1);
            while first.is_none() && t1 > 1e-14 {
                t1 *= 0.5;
                first = trial(t1);
            }
            let Some(first) = first else {
                return Some(done(g, q, it, residual, false));
            };
            // Minimizer of the parabola through q, d0 and the first trial.
            // Once value differences sink to rounding level the parabola is
            // noise, so the step comes from a secant on the directional
            // derivative instead and acceptance only asks for no increase
            // beyond that level.
            let noise = 1e3 * f64::EPSILON * q.abs();
            let flat = (first.1 - q).abs() <= noise;
            let curv = first.1 - q - d0 * t1;
            let t_star = if flat {
                let (gc, _) = self.tangent_gradient(&first.0, first.1, &first.2);
                let d1 = 2.0 * dot(&gc, &dir);
                if d1 > d0 {
                    (t1 * d0 / (d0 - d1)).min(4.0 * t1)
                } else {
                    2.0 * t1
                }
            } else if curv > 0.0 {
                (-d0 * t1 * t1 / (2.0 * curv)).min(4.0 * t1)
            } else {
                2.0 * t1
            };
            let armijo = |t: f64, qc: f64| armijo(t, qc) || (flat && qc <= q + noise);
            let mut best: Option<(f64, (Vec<f64>, f64, Vec<f64>))> = armijo(t1, first.1).then_some((t1, first));
            if (t_star - t1).abs() > 1e-3 * t1 {
                if let Some(second) = trial(t_star) {
                    if armijo(t_star, second.1) && best.as_ref().map_or(true, |b| second.1 < b.1 .1) {
                        best = Some((t_star, second));
                    }
                }
            }
            let mut t = t1.min(t_star) * 0.5;
            while best.is_none() && t > 1e-14 {
                if let Some(c) = trial(t) {
                    if armijo(t, c.1) {
                        best = Some((t, c));
                    }
                }
                t *= 0.5;
            }
            let Some((t, (cand, qc, kc))) = best else {
                return Some(done(g, q, it, residual, false));
            };
            step = t;
            prev = Some((grad, pg, dir));
            g = cand;
            q = qc;
            kg = kc;
        }
        let residual = self.residual(&g).min(residual);
        Some(done(g, q, max_iter, residual, residual < tol))
    }

    /// Runs every initial field (in parallel) and keeps the best run.
    ///
    /// Lowest value wins; values within 1e-12 relative are broken by fewer
    /// iterations, then by launch order.
    pub fn solve_many(&self, inits: Vec<Vec<f64>>, opts: &SolveOptions) -> Option<VariationalResult> {
        let runs: Vec<Option<Run>> = inits
            .par_iter()
            .map(|init| self.descend(init, opts.tol, opts.max_iter))
            .collect();
        let restart_values: Vec<f64> = runs
            .iter()
            .map(|r| r.as_ref().map_or(f64::NAN, |r| r.value))
            .collect();
        let mut best: Option<&Run> = None;
        for run in runs.iter().flatten() {
            best = match best {
                None => Some(run),
                Some(b) => {
                    let tie = (run.value - b.value).abs() <= 1e-12 * b.value.abs().max(f64::MIN_POSITIVE);
                    if (!tie && run.value < b.value) || (tie && run.iterations < b.iterations) {
                        Some(run)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let best = best?;
        let mut g = best.g.clone();
        // Report the dominant sign as positive.
        let pos: f64 = g.iter().filter(|&&x| x > 0.0).map(|&x| self.abs_power(x)).sum();
        let neg: f64 = g.iter().filter(|&&x| x < 0.0).map(|&x| self.abs_power(x)).sum();
        if neg > pos {
            for x in g.iter_mut() {
                *x = -*x;
            }
        }
        let negative_fraction = pos.min(neg) / (pos + neg);
        Some(VariationalResult {
            value: self.value(&g),
            grid: self.grid,
            optimizer: g,
            iterations: best.iterations,
            residual: best.residual,
            restarts: inits.len(),
            certified: best.converged,
            restart_values,
            negative_fraction,
        })
    }
}

/// Absolute value of white noise smoothed by a Gaussian spectral filter of
/// random width.
pub(crate) fn random_smooth_field(grid: TorusGrid, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let fft = TorusFft::new(grid);
    let noise: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let width = grid.side() as f64 * rng.random_range(0.02..0.15);
    let mut c = fft.forward_real(&noise);
    for (i, v) in c.iter_mut().enumerate() {
        let f = grid.frequency(i);
        let r2: f64 = f.iter().map(|&x| (x * x) as f64).sum();
        *v *= (-r2 / (2.0 * width * width)).exp();
    }
    fft.inverse_real(c).into_iter().map(f64::abs).collect()
}

/// Gaussian bump of standard deviation `width` (in sites) at the grid center.
pub(crate) fn bump_field(grid: TorusGrid, width: f64) -> Vec<f64> {
    let c = (grid.side() / 2) as f64;
    (0..grid.len())
        .map(|i| {
            let s = grid.site(i);
            let r2: f64 = s.iter().take(grid.dim()).map(|&x| (x as f64 - c).powi(2)).sum();
            (-r2 / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Standard initial fields: `restarts` random ones, then the constant field
/// and a centered bump, then any warm start.
pub(crate) fn initial_fields(
    grid: TorusGrid,
    opts: &SolveOptions,
    bump_width: f64,
    include_constant: bool,
    warm: Option<&[f64]>,
) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..opts.restarts as u64)
        .map(|r| random_smooth_field(grid, replica_seed(opts.seed, r)))
        .collect();
    if include_constant {
        out.push(vec![1.0; grid.len()]);
    }
    out.push(bump_field(grid, bump_width.max(0.5)));
    if let Some(w) = warm {
        out.push(w.to_vec());
    }
    out
}

/// Spectral resampling of a periodic field to another side length with the
/// same dimension: keeps the common centered frequencies.
pub fn resample_periodic(values: &[f64], from: TorusGrid, to_side: usize) -> crate::Result<Vec<f64>> {
    let to = TorusGrid::new(from.dim(), to_side)?;
    let c = TorusFft::new(from).forward_real(values);
    let mut out = vec![Complex64::new(0.0, 0.0); to.len()];
    let ratio = to.len() as f64 / from.len() as f64;
    let half_from = from.side() as i64 / 2;
    let half_to = to.side() as i64 / 2;
    for (i, v) in c.iter().enumerate() {
        let f = from.frequency(i);
        // Drop the unpaired Nyquist frequency so the result stays real.
        let keep = f.iter().take(from.dim()).all(|&x| {
            x.abs() < half_to.max(1) && (from.side() % 2 == 1 || x != -half_from)
        });
        if keep {
            out[to.index_of(&f)] += v * ratio;
        }
    }
    Ok(TorusFft::new(to).inverse_real(out))
}
