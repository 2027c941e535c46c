//! Continuous-time random walks with jump rate 1: exact jump-skeleton paths,
//! local times, self-intersection functionals and the Monte Carlo estimators
//! built on them.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::{kahan_sum, linear_fit, mean_se};
use crate::torus_fourier::{Site, TorusGrid};
use crate::walk_kernel::IncrementLaw;

/// Mixes a master seed and a replica index into an independent 64-bit seed.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    let mut z = master ^ replica.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// O(1) increment sampler: alias table over pairs `{x, -x}` plus a fair sign.
#[derive(Clone, Debug)]
pub struct JumpSampler {
    dim: usize,
    table: WeightedAliasIndex<f64>,
    sites: Vec<Site>,
    /// Index of the zero jump in `table`, if the law charges the origin.
    stay: Option<usize>,
}

impl JumpSampler {
    pub fn new(law: &IncrementLaw) -> Result<Self> {
        let (half, mass) = law.half_support();
        let mut weights: Vec<f64> = mass.iter().map(|m| 2.0 * m).collect();
        let mut sites = half.to_vec();
        let stay = if law.origin_mass() > 0.0 {
            weights.push(law.origin_mass());
            sites.push([0, 0, 0]);
            Some(sites.len() - 1)
        } else {
            None
        };
        let table = WeightedAliasIndex::new(weights)
            .map_err(|e| invalid(format!("alias table: {e}")))?;
        Ok(Self {
            dim: law.dim(),
            table,
            sites,
            stay,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Site {
        let i = self.table.sample(rng);
        let s = self.sites[i];
        if Some(i) == self.stay || rng.random::<bool>() {
            s
        } else {
            [-s[0], -s[1], -s[2]]
        }
    }
}

/// A walk path on `[0, t]`: `positions[k]` is occupied on
/// `[jump_times[k-1], jump_times[k])`, with `jump_times[-1] = 0`.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub law: IncrementLaw,
    pub horizon: f64,
    pub seed: u64,
    pub jump_times: Vec<f64>,
    pub positions: Vec<Site>,
}

impl PathSample {
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Holding intervals `(site, start, end)`.
    pub fn intervals(&self) -> Vec<(Site, f64, f64)> {
        let mut out = Vec::with_capacity(self.positions.len());
        let mut start = 0.0;
        for (k, pos) in self.positions.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            out.push((*pos, start, end));
            start = end;
        }
        out
    }
}

pub fn sample_path(law: &IncrementLaw, t: f64, seed: u64) -> Result<PathSample> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("horizon must be finite and >= 0, got {t}")));
    }
    let sampler = JumpSampler::new(law)?;
    let mut rng = rng_from_seed(seed);
    let mut jump_times = Vec::new();
    let mut positions = vec![[0i64; 3]];
    let mut clock = 0.0;
    let mut x = [0i64; 3];
    loop {
        let e: f64 = Exp1.sample(&mut rng);
        clock += e;
        if clock >= t {
            break;
        }
        let j = sampler.sample(&mut rng);
        for a in 0..3 {
            x[a] += j[a];
        }
        jump_times.push(clock);
        positions.push(x);
    }
    Ok(PathSample {
        law: law.clone(),
        horizon: t,
        seed,
        jump_times,
        positions,
    })
}

/// Sparse occupation-time record.
#[derive(Clone, Debug, Default)]
pub struct LocalTimeMap {
    pub total: f64,
    pub times: FxHashMap<Site, f64>,
}

impl LocalTimeMap {
    pub fn max(&self) -> f64 {
        self.times.values().copied().fold(0.0, f64::max)
    }

    pub fn mass(&self) -> f64 {
        kahan_sum(self.times.values().copied())
    }

    pub fn get(&self, site: &Site) -> f64 {
        self.times.get(site).copied().unwrap_or(0.0)
    }

    /// Values sorted by site, for order-independent reductions.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<(&Site, &f64)> = self.times.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v.into_iter().map(|(_, &t)| t).collect()
    }
}

pub fn local_times(path: &PathSample) -> LocalTimeMap {
    let mut map = LocalTimeMap {
        total: path.horizon,
        times: FxHashMap::default(),
    };
    for (site, a, b) in path.intervals() {
        if b > a {
            *map.times.entry(site).or_insert(0.0) += b - a;
        }
    }
    map
}

/// Sums occupation times over the classes `x + N Z^d`.
pub fn project_torus(map: &LocalTimeMap, side: usize) -> LocalTimeMap {
    let n = side as i64;
    let mut out = LocalTimeMap {
        total: map.total,
        times: FxHashMap::default(),
    };
    for (s, &v) in &map.times {
        let r = [s[0].rem_euclid(n), s[1].rem_euclid(n), s[2].rem_euclid(n)];
        *out.times.entry(r).or_insert(0.0) += v;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Silt {
    /// `I_t = sum_x l_t(x)^p`.
    pub i_t: f64,
    /// `N_p(l_t) = I_t^{1/p}`.
    pub n_p: f64,
}

pub fn silt(map: &LocalTimeMap, p: f64) -> Result<Silt> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(invalid(format!("p must be finite and >= 1, got {p}")));
    }
    let vals = map.sorted_values();
    let i_t = if p == 1.0 {
        kahan_sum(vals)
    } else if p == 2.0 {
        kahan_sum(vals.iter().map(|v| v * v))
    } else {
        kahan_sum(vals.iter().map(|v| v.powf(p)))
    };
    Ok(Silt {
        i_t,
        n_p: i_t.powf(1.0 / p),
    })
}

/// Local times of a fresh path on `[0, t]`, streamed without storing the path.
pub fn simulate_local_times<R: Rng + ?Sized>(
    sampler: &JumpSampler,
    t: f64,
    rng: &mut R,
) -> (LocalTimeMap, usize) {
    let mut map = LocalTimeMap {
        total: t,
        times: FxHashMap::default(),
    };
    let mut x = [0i64; 3];
    let mut clock = 0.0;
    let mut jumps = 0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let end = (clock + e).min(t);
        *map.times.entry(x).or_insert(0.0) += end - clock;
        clock += e;
        if clock >= t {
            break;
        }
        let j = sampler.sample(rng);
        for a in 0..3 {
            x[a] += j[a];
        }
        jumps += 1;
    }
    (map, jumps)
}

/// Local times on `T_N` of the projected walk started at the origin and
/// stopped at an independent exponential time of rate `lambda`.
pub fn torus_local_times_killed<R: Rng + ?Sized>(
    sampler: &JumpSampler,
    grid: TorusGrid,
    lambda: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let e: f64 = Exp1.sample(rng);
    let deadline = e / lambda;
    let mut x = [0i64; 3];
    let mut clock = 0.0;
    let n = grid.side() as i64;
    loop {
        let hold: f64 = Exp1.sample(rng);
        let end = (clock + hold).min(deadline);
        out[grid.index_of(&x)] += end - clock;
        clock += hold;
        if clock >= deadline {
            break;
        }
        let j = sampler.sample(rng);
        for a in 0..grid.dim() {
            x[a] = (x[a] + j[a]).rem_euclid(n);
        }
    }
    out
}

/// One row of the per-replica output schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub seed: u64,
    pub t: f64,
    pub beta: f64,
    pub i_t: f64,
    pub n_p: f64,
    pub jump_count: usize,
}

/// Runs `replicas` independent walks to time `t`; replica `r` uses
/// `replica_seed(seed, r)` so `sample_path` can reproduce any one of them.
pub fn simulate_replicas(
    law: &IncrementLaw,
    p: f64,
    t: f64,
    beta: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ReplicaRecord>> {
    if !(t > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    if !(p >= 1.0) {
        return Err(invalid("p must be >= 1"));
    }
    let sampler = JumpSampler::new(law)?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = replica_seed(seed, r);
            let mut rng = rng_from_seed(s);
            let (map, jumps) = simulate_local_times(&sampler, t, &mut rng);
            let v = silt(&map, p)?;
            Ok(ReplicaRecord {
                seed: s,
                t,
                beta,
                i_t: v.i_t,
                n_p: v.n_p,
                jump_count: jumps,
            })
        })
        .collect()
}

/// Recurrence class of the walk as it enters the typical size of `I_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingClass {
    /// `d < alpha`: `I_t ~ t^{p - (p-1)/alpha}`.
    Recurrent,
    /// `d = alpha`: `I_t ~ t log(t)^{p-1}`.
    Critical,
    /// `d > alpha`: `I_t ~ t`.
    Transient,
}

impl ScalingClass {
    pub fn of(dim: usize, alpha: f64) -> Self {
        let d = dim as f64;
        if (d - alpha).abs() < 1e-12 {
            ScalingClass::Critical
        } else if d < alpha {
            ScalingClass::Recurrent
        } else {
            ScalingClass::Transient
        }
    }

    /// Power of `t` in the typical size of `I_t`.
    pub fn exponent(&self, p: f64, alpha: f64) -> f64 {
        match self {
            ScalingClass::Recurrent => p - (p - 1.0) / alpha,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypicalRow {
    pub t: f64,
    pub mean_i: f64,
    pub se: f64,
    pub rel_se: f64,
    /// `mean(I_t) / (t log(t)^{p-1})`.
    pub log_corrected_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypicalScaling {
    pub rows: Vec<TypicalRow>,
    pub fitted_exponent: f64,
    pub class: ScalingClass,
    pub predicted_exponent: f64,
    /// max / min of the log-corrected ratio across the scan.
    pub log_ratio_spread: f64,
    /// True when the data point to a `log^{p-1}` correction: the
    /// log-corrected ratio is flatter than `mean(I_t) / t`.
    pub log_correction: bool,
    /// Some row has relative standard error above 10%.
    pub undersampled: bool,
}

pub fn typical_scaling_fit(
    law: &IncrementLaw,
    p: f64,
    ts: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<TypicalScaling> {
    if ts.len() < 2 {
        return Err(invalid("need at least two horizons"));
    }
    let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().copied().fold(0.0, f64::max);
    if !(lo > 1.0) || hi / lo < 100.0 - 1e-9 {
        return Err(invalid("horizons must exceed 1 and span at least two decades"));
    }
    if replicas < 1000 {
        return Err(invalid("typical scaling needs at least 1000 replicas"));
    }
    let mut rows = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let recs = simulate_replicas(law, p, t, f64::NAN, replicas, replica_seed(seed, k as u64))?;
        let is: Vec<f64> = recs.iter().map(|r| r.i_t).collect();
        let (m, se) = mean_se(&is);
        rows.push(TypicalRow {
            t,
            mean_i: m,
            se,
            rel_se: se / m,
            log_corrected_ratio: m / (t * t.ln().powf(p - 1.0)),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.mean_i.ln()).collect();
    let fit = linear_fit(&lx, &ly);
    let class = ScalingClass::of(law.dim(), law.alpha());
    let spread = |v: &[f64]| {
        v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let corrected: Vec<f64> = rows.iter().map(|r| r.log_corrected_ratio).collect();
    let plain: Vec<f64> = rows.iter().map(|r| r.mean_i / r.t).collect();
    let log_ratio_spread = spread(&corrected);
    Ok(TypicalScaling {
        fitted_exponent: fit.slope,
        predicted_exponent: class.exponent(p, law.alpha()),
        class,
        log_ratio_spread,
        log_correction: log_ratio_spread < spread(&plain),
        undersampled: rows.iter().any(|r| r.rel_se > 0.1),
        rows,
    })
}

/// How the scale `beta_t` depends on the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BetaSchedule {
    Fixed { beta: f64 },
    /// `beta_t = t^exponent`.
    Power { exponent: f64 },
}

impl BetaSchedule {
    pub fn beta(&self, t: f64) -> f64 {
        match *self {
            BetaSchedule::Fixed { beta } => beta,
            BetaSchedule::Power { exponent } => t.powf(exponent),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpMoment {
    pub theta: f64,
    pub t: f64,
    pub beta: f64,
    /// `(beta^alpha / t) log mean exp(theta beta^{d/q - alpha} N_p(l_t))`.
    pub estimate: f64,
    /// Jackknife standard error.
    pub se: f64,
    /// `(sum w)^2 / sum w^2` of the exponential weights.
    pub ess: f64,
    /// Share of the empirical mean carried by the largest replica.
    pub top_share: f64,
    pub well_sampled: bool,
}

/// Minimum effective sample size for an exponential moment to count as sampled.
pub const MIN_ESS: f64 = 30.0;

/// Exponential-moment estimates for several `theta` from one set of replicas.
///
/// Sharing the replicas makes the estimates exactly monotone in `theta`.
pub fn exp_moment_curve(
    law: &IncrementLaw,
    p: f64,
    thetas: &[f64],
    beta: f64,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ExpMoment>> {
    if !(p > 1.0) {
        return Err(invalid("exponential moments need p > 1"));
    }
    if !(beta > 0.0) {
        return Err(invalid("beta must be positive"));
    }
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    if thetas.iter().any(|&th| !(th >= 0.0)) {
        return Err(invalid("theta must be >= 0"));
    }
    let recs = simulate_replicas(law, p, t, beta, replicas, seed)?;
    let n_p: Vec<f64> = recs.iter().map(|r| r.n_p).collect();
    Ok(thetas
        .iter()
        .map(|&theta| exp_moment_from_norms(law, p, theta, beta, t, &n_p))
        .collect())
}

pub fn exp_moment_estimate(
    law: &IncrementLaw,
    p: f64,
    theta: f64,
    schedule: BetaSchedule,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<ExpMoment> {
    let beta = schedule.beta(t);
    let mut v = exp_moment_curve(law, p, &[theta], beta, t, replicas, seed)?;
    Ok(v.remove(0))
}

/// Estimator of [`ExpMoment`] from sampled norms `N_p(l_t)`.
pub fn exp_moment_from_norms(
    law: &IncrementLaw,
    p: f64,
    theta: f64,
    beta: f64,
    t: f64,
    n_p: &[f64],
) -> ExpMoment {
    let d = law.dim() as f64;
    let alpha = law.alpha();
    let q = p / (p - 1.0);
    let prefactor = beta.powf(alpha) / t;
    let scale = theta * beta.powf(d / q - alpha);
    let v: Vec<f64> = n_p.iter().map(|x| scale * x).collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let sw = kahan_sum(w.iter().copied());
    let sw2 = kahan_sum(w.iter().map(|x| x * x));
    let n = v.len() as f64;
    let lme = m + (sw / n).ln();
    // Leave-one-out log-mean-exp values for the jackknife.
    let loo: Vec<f64> = w.iter().map(|wi| m + ((sw - wi).max(0.0) / (n - 1.0)).ln()).collect();
    let se = if loo.iter().all(|x| x.is_finite()) {
        let lbar = loo.iter().sum::<f64>() / n;
        ((n - 1.0) / n * loo.iter().map(|x| (x - lbar).powi(2)).sum::<f64>()).sqrt()
    } else {
        f64::INFINITY
    };
    let ess = sw * sw / sw2;
    let top_share = w.iter().copied().fold(0.0, f64::max) / sw;
    ExpMoment {
        theta,
        t,
        beta,
        estimate: if theta == 0.0 { 0.0 } else { prefactor * lme },
        se: prefactor * se,
        ess,
        top_share,
        well_sampled: ess >= MIN_ESS && top_share <= 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn() -> IncrementLaw {
        IncrementLaw::nearest_neighbor(1).unwrap()
    }

    /// `int int 1{X_s = X_u} ds du` summed over pairs of holding intervals.
    fn pairwise_oracle(path: &PathSample) -> f64 {
        let iv = path.intervals();
        let mut acc = 0.0;
        for (a, s0, s1) in &iv {
            for (b, u0, u1) in &iv {
                if a == b {
                    acc += (s1 - s0) * (u1 - u0);
                }
            }
        }
        acc
    }

    #[test]
    fn zero_horizon() {
        let p = sample_path(&nn(), 0.0, 1).unwrap();
        assert!(p.jump_times.is_empty());
        assert_eq!(p.positions, vec![[0, 0, 0]]);
    }

    #[test]
    fn determinism() {
        let law = IncrementLaw::power_tail(1, 1.0, Some(1000)).unwrap();
        let a = sample_path(&law, 30.0, 42).unwrap();
        let b = sample_path(&law, 30.0, 42).unwrap();
        assert_eq!(a.jump_times, b.jump_times);
        assert_eq!(a.positions, b.positions);
        let r1 = simulate_replicas(&law, 2.0, 20.0, 1.0, 50, 9).unwrap();
        let r2 = simulate_replicas(&law, 2.0, 20.0, 1.0, 50, 9).unwrap();
        assert_eq!(r1, r2);
        // A replica can be replayed from its recorded seed.
        let replay = sample_path(&law, 20.0, r1[7].seed).unwrap();
        let s = silt(&local_times(&replay), 2.0).unwrap();
        assert!((s.i_t - r1[7].i_t).abs() <= 1e-9 * s.i_t);
        assert_eq!(replay.jump_count(), r1[7].jump_count);
    }

    #[test]
    fn poisson_jump_count() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let recs = simulate_replicas(&law, 2.0, 50.0, 1.0, 10_000, 3).unwrap();
        let counts: Vec<f64> = recs.iter().map(|r| r.jump_count as f64).collect();
        let (m, _) = mean_se(&counts);
        // Poisson(50): the standard error of the mean is sqrt(50 / 10^4).
        assert!((m - 50.0).abs() < 3.0 * (50.0f64 / 1e4).sqrt(), "mean {m}");
    }

    #[test]
    fn sampler_reproduces_law() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let s = JumpSampler::new(&law).unwrap();
        let mut rng = rng_from_seed(5);
        let mut counts = FxHashMap::<i64, f64>::default();
        let n = 200_000;
        for _ in 0..n {
            *counts.entry(s.sample(&mut rng)[0]).or_insert(0.0) += 1.0;
        }
        for (x, m) in [(1, 0.375), (-1, 0.375), (2, 0.125), (-2, 0.125)] {
            let f = counts[&x] / n as f64;
            let se = (m * (1.0 - m) / n as f64).sqrt();
            assert!((f - m).abs() < 4.0 * se, "{x}: {f}");
        }
    }

    #[test]
    fn local_time_basics() {
        let mut path = sample_path(&nn(), 7.0, 0).unwrap();
        path.jump_times.clear();
        path.positions.truncate(1);
        let lt = local_times(&path);
        assert_eq!(lt.times.len(), 1);
        assert_eq!(lt.get(&[0, 0, 0]), 7.0);
        let law = IncrementLaw::power_tail(2, 1.0, Some(50)).unwrap();
        for seed in 0..20 {
            let lt = local_times(&sample_path(&law, 40.0, seed).unwrap());
            assert!((lt.mass() - 40.0).abs() < 1e-9 * 40.0);
            assert!(lt.max() <= 40.0);
            assert!((silt(&lt, 1.0).unwrap().i_t - 40.0).abs() < 1e-9);
        }
    }

    #[test]
    fn silt_examples() {
        let mut lt = LocalTimeMap {
            total: 5.0,
            times: FxHashMap::default(),
        };
        lt.times.insert([0, 0, 0], 5.0);
        let s = silt(&lt, 3.0).unwrap();
        assert!((s.i_t - 125.0).abs() < 1e-12 && (s.n_p - 5.0).abs() < 1e-12);
        let mut u = LocalTimeMap::default();
        for x in 0..4 {
            u.times.insert([x, 0, 0], 2.5);
        }
        let s = silt(&u, 2.5).unwrap();
        assert!((s.i_t - 10f64.powf(2.5) * 4f64.powf(-1.5)).abs() < 1e-10);
        assert!(silt(&u, 0.5).is_err());
    }

    #[test]
    fn silt_matches_pairwise_oracle() {
        let law = IncrementLaw::finite_range(1).unwrap();
        for seed in 0..30 {
            let path = sample_path(&law, 25.0, seed).unwrap();
            let s = silt(&local_times(&path), 2.0).unwrap();
            let o = pairwise_oracle(&path);
            assert!((s.i_t - o).abs() < 1e-9 * o);
            assert!(s.n_p <= 25.0 + 1e-12);
        }
    }

    #[test]
    fn projection_dominates() {
        let law = IncrementLaw::power_tail(1, 1.0, Some(10_000)).unwrap();
        for seed in 0..1000 {
            let lt = local_times(&sample_path(&law, 20.0, seed).unwrap());
            let pr = project_torus(&lt, 16);
            assert!((pr.mass() - lt.mass()).abs() < 1e-9);
            for p in [1.5, 2.0, 3.0] {
                assert!(silt(&lt, p).unwrap().n_p <= silt(&pr, p).unwrap().n_p * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn killed_torus_walk_mean_occupation() {
        // E[sum_x l(x)] = 1 / lambda.
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let grid = TorusGrid::new(1, 4).unwrap();
        let s = JumpSampler::new(&law).unwrap();
        let mut rng = rng_from_seed(1);
        let tot: Vec<f64> = (0..20_000)
            .map(|_| torus_local_times_killed(&s, grid, 0.5, &mut rng).iter().sum())
            .collect();
        let (m, se) = mean_se(&tot);
        assert!((m - 2.0).abs() < 4.0 * se);
    }

    #[test]
    fn exp_moment_zero_and_monotone() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let thetas = [0.0, 0.5, 1.0, 2.0, 4.0];
        let est = exp_moment_curve(&law, 2.0, &thetas, 4.0, 200.0, 500, 11).unwrap();
        assert_eq!(est[0].estimate, 0.0);
        for w in est.windows(2) {
            assert!(w[1].estimate >= w[0].estimate);
        }
        assert!((est[0].ess - 500.0).abs() < 1e-9);
    }

    #[test]
    fn typical_scaling_preconditions() {
        let law = nn();
        assert!(typical_scaling_fit(&law, 2.0, &[10.0, 100.0], 1000, 1).is_err());
        assert!(typical_scaling_fit(&law, 2.0, &[10.0, 1000.0], 10, 1).is_err());
    }
}
