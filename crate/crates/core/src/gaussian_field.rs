//! Exact spectral sampling of the centered Gaussian field with covariance
//! `G = (lambda - A_N)^{-1}`, the Monte Carlo check of the isomorphism
//! identity between killed-walk local times and squared Gaussian fields, and
//! norm concentration diagnostics.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::stats::{median, normal_tail, quantile_sorted};
use crate::torus_fourier::{lp_norm_real, TorusFft, TorusGrid};
use crate::walk_kernel::{GreenKernel, IncrementLaw};
use crate::walk_simulator::{replica_seed, rng_from_seed, torus_local_times_killed, JumpSampler};

/// Draws fields with covariance `G` by scaling complex white noise with the
/// square roots of the Fourier multipliers.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    grid: TorusGrid,
    amplitudes: Vec<f64>,
    fft: TorusFft,
}

impl FieldSampler {
    pub fn new(kernel: &GreenKernel) -> Self {
        Self::from_multipliers(kernel.grid(), kernel.multipliers())
    }

    /// Sampler for the stationary covariance with nonnegative Fourier
    /// multipliers `m` (FFT order).
    pub fn from_multipliers(grid: TorusGrid, multipliers: &[f64]) -> Self {
        let n = grid.len() as f64;
        Self {
            grid,
            amplitudes: multipliers.iter().map(|m| (n * m.max(0.0)).sqrt()).collect(),
            fft: TorusFft::new(grid),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Two independent fields from one complex draw.
    ///
    /// With `W = F^{-1}(sqrt(N^d m) xi)` and `E|xi|^2 = 1`, `E xi^2 = 0`, one has
    /// `E W(x) conj(W(y)) = G(x, y)` and `E W(x) W(y) = 0`, so `sqrt(2) Re W`
    /// and `sqrt(2) Im W` are independent with covariance `G`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = self
            .amplitudes
            .iter()
            .map(|a| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re, im) * (a * std::f64::consts::FRAC_1_SQRT_2)
            })
            .collect();
        self.fft.inverse(&mut buf);
        let s = std::f64::consts::SQRT_2;
        (
            buf.iter().map(|c| s * c.re).collect(),
            buf.iter().map(|c| s * c.im).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
    pub seed: u64,
}

pub fn sample_field(kernel: &GreenKernel, seed: u64) -> FieldSample {
    let sampler = FieldSampler::new(kernel);
    let mut rng = rng_from_seed(seed);
    FieldSample {
        grid: kernel.grid(),
        values: sampler.sample_pair(&mut rng).0,
        seed,
    }
}

/// Splits `replicas` into fixed chunks so parallel runs reduce in a fixed order.
fn chunks(replicas: usize) -> Vec<(u64, usize)> {
    let size = 4096usize;
    let n = replicas.div_ceil(size);
    (0..n)
        .map(|c| (c as u64, size.min(replicas - c * size)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    /// Empirical `Cov(Z_0, Z_x)` for every site.
    pub cov: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_origin: f64,
    pub mean_origin_se: f64,
}

/// Empirical covariance row `Cov(Z_0, Z_x)` over `replicas` samples.
pub fn empirical_covariance(kernel: &GreenKernel, replicas: usize, seed: u64) -> CovarianceEstimate {
    let sampler = FieldSampler::new(kernel);
    let n = kernel.grid().len();
    let parts: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = chunks(replicas)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = rng_from_seed(replica_seed(seed, c));
            let mut s1 = vec![0.0; n];
            let mut s2 = vec![0.0; n];
            let mut m = 0.0;
            let mut m2 = 0.0;
            let mut done = 0;
            while done < len {
                let (a, b) = sampler.sample_pair(&mut rng);
                for z in [a, b] {
                    if done == len {
                        break;
                    }
                    for x in 0..n {
                        let v = z[0] * z[x];
                        s1[x] += v;
                        s2[x] += v * v;
                    }
                    m += z[0];
                    m2 += z[0] * z[0];
                    done += 1;
                }
            }
            (s1, s2, m, m2)
        })
        .collect();
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let (mut m, mut m2) = (0.0, 0.0);
    for (a, b, c, d) in parts {
        for x in 0..n {
            s1[x] += a[x];
            s2[x] += b[x];
        }
        m += c;
        m2 += d;
    }
    let r = replicas as f64;
    // The field is centered, so E[Z_0 Z_x] is the covariance.
    let cov: Vec<f64> = s1.iter().map(|s| s / r).collect();
    let se = s2
        .iter()
        .zip(&cov)
        .map(|(s, c)| ((s / r - c * c) / r).max(0.0).sqrt())
        .collect();
    CovarianceEstimate {
        cov,
        se,
        mean_origin: m / r,
        mean_origin_se: ((m2 / r - (m / r).powi(2)) / r).sqrt(),
    }
}

/// Test functionals `F` acting on a nonnegative field `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctional {
    One,
    /// `exp(-sum_x v_x)`.
    ExpNegSum,
    /// `min(v_0, cap)`.
    MinOrigin { cap: f64 },
    /// `1{v_0 <= level}`.
    IndicatorOriginBelow { level: f64 },
    /// `1 / (1 + sum_x v_x^2)`.
    InvOnePlusSumSq,
    /// `cos(v_0 - v_1)`.
    CosDiff,
    /// `exp(-max_x v_x)`.
    ExpNegMax,
    /// `sum_x v_x`; unbounded.
    Sum,
    /// `v_0`; unbounded.
    Origin,
}

impl TestFunctional {
    pub fn is_bounded(&self) -> bool {
        !matches!(self, TestFunctional::Sum | TestFunctional::Origin)
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        match *self {
            TestFunctional::One => 1.0,
            TestFunctional::ExpNegSum => (-v.iter().sum::<f64>()).exp(),
            TestFunctional::MinOrigin { cap } => v[0].min(cap),
            TestFunctional::IndicatorOriginBelow { level } => f64::from(u8::from(v[0] <= level)),
            TestFunctional::InvOnePlusSumSq => 1.0 / (1.0 + v.iter().map(|x| x * x).sum::<f64>()),
            TestFunctional::CosDiff => (v[0] - v.get(1).copied().unwrap_or(0.0)).cos(),
            TestFunctional::ExpNegMax => (-v.iter().copied().fold(f64::NEG_INFINITY, f64::max)).exp(),
            TestFunctional::Sum => v.iter().sum(),
            TestFunctional::Origin => v[0],
        }
    }

    /// The bounded battery used by the isomorphism checks.
    pub fn battery() -> Vec<TestFunctional> {
        vec![
            TestFunctional::One,
            TestFunctional::ExpNegSum,
            TestFunctional::MinOrigin { cap: 10.0 },
            TestFunctional::IndicatorOriginBelow { level: 1.0 },
            TestFunctional::InvOnePlusSumSq,
            TestFunctional::CosDiff,
            TestFunctional::ExpNegMax,
        ]
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunctional::One => write!(f, "one"),
            TestFunctional::ExpNegSum => write!(f, "exp-neg-sum"),
            TestFunctional::MinOrigin { cap } => write!(f, "min-origin:{cap}"),
            TestFunctional::IndicatorOriginBelow { level } => write!(f, "indicator-origin-below:{level}"),
            TestFunctional::InvOnePlusSumSq => write!(f, "inv-one-plus-sum-sq"),
            TestFunctional::CosDiff => write!(f, "cos-diff"),
            TestFunctional::ExpNegMax => write!(f, "exp-neg-max"),
            TestFunctional::Sum => write!(f, "sum"),
            TestFunctional::Origin => write!(f, "origin"),
        }
    }
}

impl FromStr for TestFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map(|a| a.parse::<f64>().map_err(|e| invalid(format!("functional `{s}`: {e}"))))
                .unwrap_or(Ok(default))
        };
        Ok(match name {
            "one" => TestFunctional::One,
            "exp-neg-sum" => TestFunctional::ExpNegSum,
            "min-origin" => TestFunctional::MinOrigin { cap: num(10.0)? },
            "indicator-origin-below" => TestFunctional::IndicatorOriginBelow { level: num(1.0)? },
            "inv-one-plus-sum-sq" => TestFunctional::InvOnePlusSumSq,
            "cos-diff" => TestFunctional::CosDiff,
            "exp-neg-max" => TestFunctional::ExpNegMax,
            "sum" => TestFunctional::Sum,
            "origin" => TestFunctional::Origin,
            _ => return Err(invalid(format!("unknown functional `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EisenbaumReport {
    pub functional: String,
    pub replicas: usize,
    pub side: usize,
    pub lambda: f64,
    pub s: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub z_score: f64,
}

/// Compares `E[F(l_tau + (Z + s)^2 / 2)]` with `E[F((Z + s)^2 / 2)(1 + Z_0 / s)]`,
/// where `l_tau` is the torus local time of the walk started at the origin and
/// killed at rate `lambda`, and `Z` has covariance `(lambda - A_N)^{-1}`.
///
/// Both sides use independent samples, so the z-score combines their errors.
pub fn eisenbaum_check(
    law: &IncrementLaw,
    side: usize,
    lambda: f64,
    s: f64,
    functionals: &[TestFunctional],
    replicas: usize,
    seed: u64,
) -> Result<Vec<EisenbaumReport>> {
    if s == 0.0 || !s.is_finite() {
        return Err(invalid("shift s must be nonzero and finite"));
    }
    if let Some(f) = functionals.iter().find(|f| !f.is_bounded()) {
        return Err(Error::UnboundedFunctional(f.to_string()));
    }
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    let kernel = GreenKernel::new(law, side, lambda)?;
    let sampler = FieldSampler::new(&kernel);
    let jumps = JumpSampler::new(law)?;
    let grid = kernel.grid();
    let k = functionals.len();
    let parts: Vec<[Vec<f64>; 4]> = chunks(replicas)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = rng_from_seed(replica_seed(seed, c));
            let mut acc = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
            let mut v = vec![0.0; grid.len()];
            for _ in 0..len {
                let (z1, z2) = sampler.sample_pair(&mut rng);
                let l = torus_local_times_killed(&jumps, grid, lambda, &mut rng);
                for x in 0..v.len() {
                    v[x] = l[x] + 0.5 * (z1[x] + s).powi(2);
                }
                for (i, f) in functionals.iter().enumerate() {
                    let a = f.eval(&v);
                    acc[0][i] += a;
                    acc[1][i] += a * a;
                }
                for x in 0..v.len() {
                    v[x] = 0.5 * (z2[x] + s).powi(2);
                }
                let w = 1.0 + z2[0] / s;
                for (i, f) in functionals.iter().enumerate() {
                    let b = f.eval(&v) * w;
                    acc[2][i] += b;
                    acc[3][i] += b * b;
                }
            }
            acc
        })
        .collect();
    let mut tot = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    for p in parts {
        for j in 0..4 {
            for i in 0..k {
                tot[j][i] += p[j][i];
            }
        }
    }
    let r = replicas as f64;
    Ok(functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let lhs = tot[0][i] / r;
            let rhs = tot[2][i] / r;
            let lhs_se = ((tot[1][i] / r - lhs * lhs).max(0.0) / (r - 1.0)).sqrt();
            let rhs_se = ((tot[3][i] / r - rhs * rhs).max(0.0) / (r - 1.0)).sqrt();
            let comb = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
            let diff = (lhs - rhs).abs();
            EisenbaumReport {
                functional: f.to_string(),
                replicas,
                side,
                lambda,
                s,
                lhs,
                lhs_se,
                rhs,
                rhs_se,
                z_score: if comb > 0.0 { diff / comb } else if diff == 0.0 { 0.0 } else { f64::INFINITY },
            }
        })
        .collect())
}

/// `E[Y^{2p}]` for a standard Gaussian `Y`.
pub fn gaussian_even_moment(p: f64) -> f64 {
    2f64.powf(p) * gamma(p + 0.5) / PI.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub median: f64,
    pub ys: Vec<f64>,
    /// Empirical `P(|N_{2p}(Z) - M| >= sqrt(y))`.
    pub empirical: Vec<f64>,
    pub se: Vec<f64>,
    /// `2 P(Y >= sqrt(y rho))`, capped at 1.
    pub bound: Vec<f64>,
    /// Indices where the empirical tail exceeds the bound by more than 3 s.e.
    pub violations: Vec<usize>,
    /// `(2 E[Y^{2p}])^{1/p} N^{d/p} G(0,0)`, an upper bound on `M^2`.
    pub median_sq_bound: f64,
    pub median_bound_holds: bool,
}

/// Gaussian concentration of `N_{2p}(Z)` around its median.
///
/// `rho` is `inf{lambda |h|_2^2 - <h, A h> : N_{2p}(h) = 1}` for the kernel;
/// `1 / sqrt(rho)` is the Lipschitz constant of `N_{2p}` under `G`.
pub fn norm_concentration_check(
    kernel: &GreenKernel,
    p: f64,
    rho: f64,
    replicas: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if !(p >= 1.0) || !(rho > 0.0) {
        return Err(invalid("need p >= 1 and rho > 0"));
    }
    let norms = sample_norms(kernel, 2.0 * p, replicas, seed)?;
    let m = median(&norms);
    let y_max = 16.0 / rho;
    let ys: Vec<f64> = (0..=40).map(|i| y_max * i as f64 / 40.0).collect();
    let r = norms.len() as f64;
    let mut empirical = Vec::new();
    let mut se = Vec::new();
    let mut bound = Vec::new();
    let mut violations = Vec::new();
    for (i, &y) in ys.iter().enumerate() {
        let dev = y.sqrt();
        let hits = norms.iter().filter(|&&x| (x - m).abs() >= dev).count() as f64;
        let e = hits / r;
        let s = (e * (1.0 - e) / r).sqrt().max(1.0 / r);
        let b = (2.0 * normal_tail((y * rho).sqrt())).min(1.0);
        if e > b + 3.0 * s {
            violations.push(i);
        }
        empirical.push(e);
        se.push(s);
        bound.push(b);
    }
    let g = kernel.grid();
    let median_sq_bound = (2.0 * gaussian_even_moment(p)).powf(1.0 / p)
        * (g.side() as f64).powf(g.dim() as f64 / p)
        * kernel.origin();
    Ok(ConcentrationReport {
        median: m,
        ys,
        empirical,
        se,
        bound,
        violations,
        median_sq_bound,
        median_bound_holds: m * m <= median_sq_bound,
    })
}

/// `N_r(Z)` for `replicas` independent fields.
pub fn sample_norms(kernel: &GreenKernel, r: f64, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    if !(r >= 1.0) {
        return Err(invalid("norm exponent must be >= 1"));
    }
    let sampler = FieldSampler::new(kernel);
    let parts: Vec<Vec<f64>> = chunks(replicas)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = rng_from_seed(replica_seed(seed, c));
            let mut out = Vec::with_capacity(len);
            while out.len() < len {
                let (a, b) = sampler.sample_pair(&mut rng);
                out.push(lp_norm_real(&a, r).expect("r >= 1"));
                if out.len() < len {
                    out.push(lp_norm_real(&b, r).expect("r >= 1"));
                }
            }
            out
        })
        .collect();
    Ok(parts.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianNorm {
    pub median: f64,
    /// 95% bootstrap interval.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
}

pub fn median_norm(kernel: &GreenKernel, r: f64, replicas: usize, seed: u64) -> Result<MedianNorm> {
    if replicas < 1000 {
        return Err(invalid("median estimate needs at least 1000 replicas"));
    }
    let norms = sample_norms(kernel, r, replicas, seed)?;
    let (lo, hi) = bootstrap_median_ci(&norms, 400, replica_seed(seed, u64::MAX));
    Ok(MedianNorm {
        median: median(&norms),
        ci_lo: lo,
        ci_hi: hi,
        replicas,
    })
}

fn bootstrap_median_ci(xs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng_from_seed(seed);
    let n = xs.len();
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| xs[rng.random_range(0..n)]).collect();
            median(&v)
        })
        .collect();
    meds.sort_by(|a, b| a.total_cmp(b));
    (quantile_sorted(&meds, 0.025), quantile_sorted(&meds, 0.975))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedMedians {
    pub lambda_high: f64,
    pub lambda_low: f64,
    pub median_high: f64,
    pub median_low: f64,
}

/// Medians of `N_r(Z)` at two killing rates from coupled samples: the
/// low-rate field is the high-rate field plus an independent field with the
/// (nonnegative) difference of the multipliers.
pub fn paired_median_norms(
    law: &IncrementLaw,
    side: usize,
    lambda_high: f64,
    lambda_low: f64,
    r: f64,
    replicas: usize,
    seed: u64,
) -> Result<PairedMedians> {
    if !(lambda_low > 0.0 && lambda_low < lambda_high) {
        return Err(invalid("need 0 < lambda_low < lambda_high"));
    }
    let hi = GreenKernel::new(law, side, lambda_high)?;
    let lo = GreenKernel::new(law, side, lambda_low)?;
    let extra: Vec<f64> = lo
        .multipliers()
        .iter()
        .zip(hi.multipliers())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    let base = FieldSampler::new(&hi);
    let add = FieldSampler::from_multipliers(hi.grid(), &extra);
    let mut rng = rng_from_seed(seed);
    let mut a = Vec::with_capacity(replicas);
    let mut b = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let (z, _) = base.sample_pair(&mut rng);
        let (w, _) = add.sample_pair(&mut rng);
        let zl: Vec<f64> = z.iter().zip(&w).map(|(x, y)| x + y).collect();
        a.push(lp_norm_real(&z, r)?);
        b.push(lp_norm_real(&zl, r)?);
    }
    Ok(PairedMedians {
        lambda_high,
        lambda_low,
        median_high: median(&a),
        median_low: median(&b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn two_site() -> GreenKernel {
        GreenKernel::new(&IncrementLaw::nearest_neighbor(1).unwrap(), 2, 1.0).unwrap()
    }

    #[test]
    fn centered_with_correct_variance() {
        let est = empirical_covariance(&two_site(), 100_000, 1);
        assert!(est.mean_origin.abs() < 4.0 * est.mean_origin_se);
        assert!((est.cov[0] - 2.0 / 3.0).abs() < 3.0 * est.se[0], "{}", est.cov[0]);
        assert!((est.cov[1] - 1.0 / 3.0).abs() < 4.0 * est.se[1]);
    }

    #[test]
    fn covariance_matches_kernel_and_cholesky_oracle() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let kernel = GreenKernel::new(&law, 8, 0.3).unwrap();
        let est = empirical_covariance(&kernel, 100_000, 2);
        for x in 0..8 {
            assert!((est.cov[x] - kernel.row()[x]).abs() < 4.0 * est.se[x], "x = {x}");
        }
        // Dense Cholesky sampler as an independent route to the same law.
        let g = DMatrix::from_row_slice(8, 8, &kernel.dense());
        let l = g.cholesky().unwrap().l();
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let mut s = [0.0; 8];
        let mut s2 = [0.0; 8];
        for _ in 0..n {
            let xi = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
            let z = &l * xi;
            for x in 0..8 {
                s[x] += z[0] * z[x];
                s2[x] += (z[0] * z[x]).powi(2);
            }
        }
        for x in 0..8 {
            let c = s[x] / n as f64;
            let se = ((s2[x] / n as f64 - c * c) / n as f64).sqrt();
            let comb = (se * se + est.se[x] * est.se[x]).sqrt();
            assert!((c - est.cov[x]).abs() < 4.0 * comb);
        }
    }

    #[test]
    fn sample_field_is_reproducible() {
        let k = two_site();
        assert_eq!(sample_field(&k, 9), sample_field(&k, 9));
        assert_ne!(sample_field(&k, 9).values, sample_field(&k, 10).values);
    }

    #[test]
    fn constant_functional_is_exact_on_the_left() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let r = eisenbaum_check(&law, 2, 1.0, 1.0, &[TestFunctional::One], 20_000, 4).unwrap();
        assert_eq!(r[0].lhs, 1.0);
        assert!((r[0].rhs - 1.0).abs() < 4.0 * r[0].rhs_se);
    }

    #[test]
    fn identity_holds_on_small_torus() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let f = [TestFunctional::ExpNegSum, TestFunctional::MinOrigin { cap: 10.0 }];
        let r = eisenbaum_check(&law, 2, 1.0, 1.0, &f, 200_000, 5).unwrap();
        for rep in &r {
            assert!(rep.z_score < 3.5, "{rep:?}");
        }
    }

    #[test]
    fn unbounded_functionals_rejected() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let e = eisenbaum_check(&law, 2, 1.0, 1.0, &[TestFunctional::Sum], 10, 0);
        assert!(matches!(e, Err(Error::UnboundedFunctional(_))));
        assert!(eisenbaum_check(&law, 2, 1.0, 0.0, &[TestFunctional::One], 10, 0).is_err());
    }

    #[test]
    fn functional_names_round_trip() {
        for f in TestFunctional::battery() {
            assert_eq!(f.to_string().parse::<TestFunctional>().unwrap(), f);
        }
    }

    #[test]
    fn even_moments() {
        assert!((gaussian_even_moment(1.0) - 1.0).abs() < 1e-12);
        assert!((gaussian_even_moment(2.0) - 3.0).abs() < 1e-12);
        assert!((gaussian_even_moment(3.0) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn median_vanishes_with_fast_killing() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let k = GreenKernel::new(&law, 2, 1e10).unwrap();
        let m = median_norm(&k, 4.0, 2000, 1).unwrap();
        assert!(m.median < 1e-4);
        assert!(m.ci_lo <= m.median && m.median <= m.ci_hi);
    }

    #[test]
    fn paired_medians_increase_as_killing_slows() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let pm = paired_median_norms(&law, 8, 2.0, 0.2, 4.0, 5000, 7).unwrap();
        assert!(pm.median_low > pm.median_high);
    }
}
