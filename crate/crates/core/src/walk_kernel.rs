//! Symmetric increment laws on `Z^d`, their characteristic functions, and the
//! torus operators built from them: the generator `A_N`, heat kernel and
//! Green kernel `(lambda - A_N)^{-1}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{kahan_sum, linear_fit};
use crate::torus_fourier::{periodize, Site, TorusFft, TorusGrid, MAX_DIM, MAX_TORUS_SITES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    /// `mu(+-1) = 3/8`, `mu(+-2) = 1/8` per coordinate (product law for `d > 1`).
    FiniteRange,
    /// Simple random walk. Arithmetic, so it fails the non-arithmetic check;
    /// kept because its small-torus quantities have closed forms.
    NearestNeighbor,
    /// `mu(x)` proportional to `|x|^{-(d + alpha)}` on `0 < |x| <= truncation`.
    PowerTail,
    Custom,
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LawKind::FiniteRange => "finite-range",
            LawKind::NearestNeighbor => "nearest-neighbor",
            LawKind::PowerTail => "power-tail",
            LawKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Default truncation radius of power-tail laws.
///
/// A radius of 10^3 in three dimensions would need ~4e9 support points, so
/// d = 3 uses a much smaller ball.
pub fn default_truncation(dim: usize) -> u64 {
    match dim {
        1 => 1_000_000,
        2 => 1_000,
        _ => 48,
    }
}

/// Symmetric probability law on `Z^d`.
///
/// The support is stored as one representative per pair `{x, -x}`; each
/// stored mass is `mu(x) = mu(-x)`.
#[derive(Clone)]
pub struct IncrementLaw {
    dim: usize,
    alpha: f64,
    kind: LawKind,
    truncation: Option<u64>,
    half_sites: Arc<[Site]>,
    half_mass: Arc<[f64]>,
    origin_mass: f64,
    calibration: Arc<OnceLock<StableCalibration>>,
}

impl fmt::Debug for IncrementLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncrementLaw")
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("kind", &self.kind)
            .field("truncation", &self.truncation)
            .field("support_pairs", &self.half_sites.len())
            .finish()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(invalid(format!("dimension must be 1..=3, got {dim}")));
    }
    Ok(())
}

/// True when `x` is the representative of `{x, -x}`: first nonzero coordinate positive.
fn is_positive_half(x: &Site) -> bool {
    for &c in x {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

impl IncrementLaw {
    pub fn finite_range(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let one_d = [(1i64, 3.0 / 8.0), (2, 1.0 / 8.0), (-1, 3.0 / 8.0), (-2, 1.0 / 8.0)];
        let mut entries = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let mut site = [0i64; 3];
            let mut m = 1.0;
            for (a, &i) in idx.iter().enumerate() {
                site[a] = one_d[i].0;
                m *= one_d[i].1;
            }
            entries.push((site, m));
            let mut a = 0;
            while a < dim {
                idx[a] += 1;
                if idx[a] < 4 {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == dim {
                break;
            }
        }
        Self::build(dim, 2.0, LawKind::FiniteRange, None, entries)
    }

    pub fn nearest_neighbor(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let m = 1.0 / (2 * dim) as f64;
        let mut entries = Vec::new();
        for a in 0..dim {
            let mut e = [0i64; 3];
            e[a] = 1;
            entries.push((e, m));
            e[a] = -1;
            entries.push((e, m));
        }
        Self::build(dim, 2.0, LawKind::NearestNeighbor, None, entries)
    }

    /// Power-tail law with index `alpha` in (0, 2), truncated to the
    /// Euclidean ball of radius `truncation` and renormalized.
    pub fn power_tail(dim: usize, alpha: f64, truncation: Option<u64>) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidLaw(format!(
                "power-tail index must lie in (0, 2), got {alpha}"
            )));
        }
        let t = truncation.unwrap_or_else(|| default_truncation(dim));
        if t == 0 {
            return Err(Error::InvalidLaw("truncation radius must be positive".into()));
        }
        let pairs = match dim {
            1 => t as f64,
            2 => PI * (t as f64).powi(2) / 2.0,
            _ => 2.0 * PI * (t as f64).powi(3) / 3.0,
        };
        if pairs > 2e7 {
            return Err(Error::InvalidLaw(format!(
                "truncation {t} in dimension {dim} needs ~{pairs:.0} support points"
            )));
        }
        let ti = t as i64;
        let t2 = (t as u128).pow(2);
        let expo = -(dim as f64 + alpha) / 2.0;
        let mut sites = Vec::new();
        let mut mass = Vec::new();
        let (ry, rz) = match dim {
            1 => (0, 0),
            2 => (ti, 0),
            _ => (ti, ti),
        };
        for x in 0..=ti {
            for y in -ry..=ry {
                for z in -rz..=rz {
                    let s = [x, y, z];
                    if !is_positive_half(&s) {
                        continue;
                    }
                    let r2 = (x * x + y * y + z * z) as u128;
                    if r2 > t2 {
                        continue;
                    }
                    sites.push(s);
                    mass.push((r2 as f64).powf(expo));
                }
            }
        }
        let total = 2.0 * kahan_sum(mass.iter().copied());
        for m in &mut mass {
            *m /= total;
        }
        Ok(Self {
            dim,
            alpha,
            kind: LawKind::PowerTail,
            truncation: Some(t),
            half_sites: sites.into(),
            half_mass: mass.into(),
            origin_mass: 0.0,
            calibration: Arc::default(),
        })
    }

    /// Arbitrary finitely supported law; must be symmetric and sum to one.
    pub fn custom(dim: usize, alpha: f64, entries: Vec<(Site, f64)>) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::InvalidLaw(format!("index must lie in (0, 2], got {alpha}")));
        }
        Self::build(dim, alpha, LawKind::Custom, None, entries)
    }

    fn build(
        dim: usize,
        alpha: f64,
        kind: LawKind,
        truncation: Option<u64>,
        entries: Vec<(Site, f64)>,
    ) -> Result<Self> {
        let mut map: std::collections::BTreeMap<Site, f64> = Default::default();
        for (s, m) in entries {
            if s[dim..].iter().any(|&c| c != 0) {
                return Err(Error::InvalidLaw(format!(
                    "site {s:?} has nonzero coordinates beyond dimension {dim}"
                )));
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::InvalidLaw(format!("negative or non-finite mass at {s:?}")));
            }
            *map.entry(s).or_insert(0.0) += m;
        }
        let total = kahan_sum(map.values().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("masses sum to {total}, not 1")));
        }
        let origin_mass = map.get(&[0, 0, 0]).copied().unwrap_or(0.0);
        let mut sites = Vec::new();
        let mut mass = Vec::new();
        for (s, &m) in &map {
            if !is_positive_half(s) {
                continue;
            }
            let neg = [-s[0], -s[1], -s[2]];
            let mm = map.get(&neg).copied().unwrap_or(0.0);
            if (m - mm).abs() > 1e-15 {
                return Err(Error::InvalidLaw(format!(
                    "not symmetric: mu({s:?}) = {m} but mu({neg:?}) = {mm}"
                )));
            }
            if m > 0.0 {
                sites.push(*s);
                mass.push(m);
            }
        }
        for (s, &m) in &map {
            if !is_positive_half(s) && *s != [0, 0, 0] {
                let neg = [-s[0], -s[1], -s[2]];
                if !map.contains_key(&neg) && m > 0.0 {
                    return Err(Error::InvalidLaw(format!("not symmetric at {s:?}")));
                }
            }
        }
        Ok(Self {
            dim,
            alpha,
            kind,
            truncation,
            half_sites: sites.into(),
            half_mass: mass.into(),
            origin_mass,
            calibration: Arc::default(),
        })
    }

    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        let law = match spec.kind {
            LawKind::FiniteRange => Self::finite_range(spec.dim)?,
            LawKind::NearestNeighbor => Self::nearest_neighbor(spec.dim)?,
            LawKind::PowerTail => Self::power_tail(spec.dim, spec.alpha, spec.truncation)?,
            LawKind::Custom => {
                let entries = spec
                    .entries
                    .clone()
                    .ok_or_else(|| Error::InvalidLaw("custom law needs `entries`".into()))?;
                Self::custom(spec.dim, spec.alpha, entries)?
            }
        };
        if matches!(spec.kind, LawKind::FiniteRange | LawKind::NearestNeighbor)
            && (spec.alpha - 2.0).abs() > 1e-12
        {
            return Err(Error::InvalidLaw(format!("{} laws have alpha = 2", spec.kind)));
        }
        if let Some(s) = spec.sigma {
            let own = law.sigma();
            if ((s - own) / own).abs() > 1e-6 {
                return Err(Error::InvalidLaw(format!(
                    "recorded sigma {s} does not match recomputed {own}"
                )));
            }
        }
        Ok(law)
    }

    pub fn spec(&self) -> LawSpec {
        LawSpec {
            kind: self.kind,
            alpha: self.alpha,
            dim: self.dim,
            truncation: self.truncation,
            sigma: Some(self.sigma()),
            entries: (self.kind == LawKind::Custom).then(|| self.entries()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn truncation(&self) -> Option<u64> {
        self.truncation
    }

    /// One representative per pair `{x, -x}` and the common mass `mu(x)`.
    pub fn half_support(&self) -> (&[Site], &[f64]) {
        (&self.half_sites, &self.half_mass)
    }

    pub fn origin_mass(&self) -> f64 {
        self.origin_mass
    }

    /// Full support as `(site, mass)` pairs.
    pub fn entries(&self) -> Vec<(Site, f64)> {
        let mut out = Vec::with_capacity(2 * self.half_sites.len() + 1);
        if self.origin_mass > 0.0 {
            out.push(([0, 0, 0], self.origin_mass));
        }
        for (s, &m) in self.half_sites.iter().zip(self.half_mass.iter()) {
            out.push((*s, m));
            out.push(([-s[0], -s[1], -s[2]], m));
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.origin_mass + 2.0 * kahan_sum(self.half_mass.iter().copied())
    }

    fn phase(&self, s: &Site, omega: &[f64]) -> f64 {
        (0..self.dim).map(|a| s[a] as f64 * omega[a]).sum()
    }

    /// `F(mu)(omega) = sum_x mu(x) cos(2 pi <omega, x>)`.
    pub fn char_function(&self, omega: &[f64]) -> f64 {
        assert!(omega.len() >= self.dim, "frequency has too few coordinates");
        let s = kahan_sum(
            self.half_sites
                .iter()
                .zip(self.half_mass.iter())
                .map(|(x, &m)| m * (2.0 * PI * self.phase(x, omega)).cos()),
        );
        self.origin_mass + 2.0 * s
    }

    /// `1 - F(mu)(omega)`, evaluated as `sum mu(x) 2 sin^2(pi <omega, x>)` so
    /// that small frequencies keep full relative precision.
    pub fn one_minus_char(&self, omega: &[f64]) -> f64 {
        assert!(omega.len() >= self.dim, "frequency has too few coordinates");
        4.0 * kahan_sum(self.half_sites.iter().zip(self.half_mass.iter()).map(|(x, &m)| {
            let s = (PI * self.phase(x, omega)).sin();
            m * s * s
        }))
    }

    /// `sum_x x_1^2 mu(x)`, averaged over coordinate axes.
    pub fn second_moment_per_axis(&self) -> f64 {
        let total: f64 = self
            .half_sites
            .iter()
            .zip(self.half_mass.iter())
            .map(|(x, &m)| 2.0 * m * (0..self.dim).map(|a| (x[a] * x[a]) as f64).sum::<f64>())
            .sum();
        total / self.dim as f64
    }

    /// Energy weight: `1 - F(mu)(u) ~ sigma |u|^alpha` as `u -> 0`.
    ///
    /// Exact `2 pi^2 sum x_1^2 mu(x)` when alpha = 2, fitted otherwise.
    pub fn sigma(&self) -> f64 {
        if self.alpha == 2.0 {
            2.0 * PI * PI * self.second_moment_per_axis()
        } else {
            self.calibration().sigma
        }
    }

    /// Cached result of [`calibrate_stable_coefficient`].
    pub fn calibration(&self) -> &StableCalibration {
        self.calibration.get_or_init(|| calibrate_stable_coefficient(self))
    }

    /// Torus symbol `1 - F_N(mu_N)(n)` (FFT order) of the periodized law.
    pub fn torus_symbol(&self, side: usize) -> Result<Vec<f64>> {
        let grid = TorusGrid::new(self.dim, side)?;
        let field = periodize(self.dim, self.entries(), side)?;
        let fft = TorusFft::new(grid);
        let mut buf = field.into_values();
        // Transform 1 - mu_N directly: the origin weight absorbs the 1.
        buf[0] -= Complex64::new(1.0, 0.0);
        fft.forward(&mut buf);
        Ok(buf.into_iter().map(|c| (-c.re).max(0.0)).collect())
    }

    /// Checks of symmetry, normalization, non-arithmeticity, stable domain
    /// and (for power tails) the two-sided tail bound.
    pub fn check_hypotheses(&self) -> HypothesisReport {
        let total = self.total_mass();
        let per_axis = match self.dim {
            1 => 64usize,
            2 => 16,
            _ => 6,
        };
        let mut max_abs: f64 = 0.0;
        let n_total = per_axis.pow(self.dim as u32);
        let points: Vec<[f64; 3]> = (0..n_total)
            .filter_map(|mut i| {
                let mut w = [0.0; 3];
                let mut zero = true;
                for c in w.iter_mut().take(self.dim) {
                    let k = (i % per_axis) as i64 - per_axis as i64 / 2;
                    i /= per_axis;
                    *c = k as f64 / per_axis as f64;
                    zero &= k == 0;
                }
                (!zero).then_some(w)
            })
            .collect();
        let values: Vec<f64> = points.par_iter().map(|w| self.char_function(w).abs()).collect();
        for v in values {
            max_abs = max_abs.max(v);
        }
        let (tail_c1, tail_c2) = if self.kind == LawKind::PowerTail {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for (x, &m) in self.half_sites.iter().zip(self.half_mass.iter()) {
                let r = (x.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
                let v = m * r.powf(self.dim as f64 + self.alpha);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        let cal = self.calibration();
        HypothesisReport {
            symmetric: true,
            mass_defect: (total - 1.0).abs(),
            max_char_modulus: max_abs,
            non_arithmetic: max_abs < 1.0 - 1e-6,
            stable_domain: cal.in_stable_domain,
            tail_c1,
            tail_c2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// Enforced at construction.
    pub symmetric: bool,
    pub mass_defect: f64,
    /// Largest `|F(mu)(omega)|` over a grid of `[-1/2, 1/2)^d` minus the origin.
    pub max_char_modulus: f64,
    pub non_arithmetic: bool,
    pub stable_domain: bool,
    /// Smallest and largest `mu(x) |x|^{d + alpha}` on the support.
    pub tail_c1: Option<f64>,
    pub tail_c2: Option<f64>,
}

/// Text record of a law for manifests and configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub kind: LawKind,
    pub alpha: f64,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(Site, f64)>>,
}

impl LawSpec {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("law spec serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StableCalibration {
    pub sigma: f64,
    pub alpha_hat: f64,
    /// `|alpha_hat - alpha|`.
    pub exponent_residual: f64,
    /// RMS of the free log-log fit.
    pub fit_rms: f64,
    pub in_stable_domain: bool,
}

/// Fits `1 - F(mu)(u) = sigma |u|^alpha (1 + o(1))` on a geometric mesh of
/// `u in [1e-4, 1e-2]` along the first axis.
///
/// `alpha_hat` comes from the free log-log fit. `sigma` is the intercept of
/// `(1 - F(u)) / u^alpha = sigma + c u^k`, with `k = 2 - alpha` (`k = 2` when
/// alpha = 2), which removes the leading lattice correction.
pub fn calibrate_stable_coefficient(law: &IncrementLaw) -> StableCalibration {
    const POINTS: usize = 25;
    let us: Vec<f64> = (0..POINTS)
        .map(|i| 1e-4 * 100f64.powf(i as f64 / (POINTS - 1) as f64))
        .collect();
    let vals: Vec<f64> = us
        .par_iter()
        .map(|&u| law.one_minus_char(&[u, 0.0, 0.0]))
        .collect();
    let lx: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    let ly: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    let free = linear_fit(&lx, &ly);
    let alpha = law.alpha();
    let k = if alpha < 2.0 { 2.0 - alpha } else { 2.0 };
    let cx: Vec<f64> = us.iter().map(|u| u.powf(k)).collect();
    let cy: Vec<f64> = us.iter().zip(&vals).map(|(u, v)| v / u.powf(alpha)).collect();
    let corr = linear_fit(&cx, &cy);
    let residual = (free.slope - alpha).abs();
    StableCalibration {
        sigma: corr.intercept,
        alpha_hat: free.slope,
        exponent_residual: residual,
        fit_rms: free.rms,
        in_stable_domain: residual <= 0.05 && corr.intercept > 0.0,
    }
}

/// The generator `A_N h(x) = sum_y mu_N(y) (h(x + y) - h(x))` of the walk
/// projected on `T_N`.
#[derive(Clone, Debug)]
pub struct TorusGenerator {
    grid: TorusGrid,
    jumps: Vec<(Site, f64)>,
    symbol: Vec<f64>,
    fft: TorusFft,
}

impl TorusGenerator {
    pub fn new(law: &IncrementLaw, side: usize) -> Result<Self> {
        if side < 2 {
            return Err(invalid("torus generator needs side >= 2"));
        }
        let grid = TorusGrid::new(law.dim(), side)?;
        let field = periodize(law.dim(), law.entries(), side)?;
        let jumps = field
            .values()
            .iter()
            .enumerate()
            .filter(|(i, v)| *i != 0 && v.re != 0.0)
            .map(|(i, v)| (grid.site(i), v.re))
            .collect();
        Ok(Self {
            grid,
            jumps,
            symbol: law.torus_symbol(side)?,
            fft: TorusFft::new(grid),
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// `1 - F(mu)(n / N)` in FFT order.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Nonzero off-origin jump weights of the periodized law.
    pub fn jumps(&self) -> &[(Site, f64)] {
        &self.jumps
    }

    /// Space-domain application, `O(N^d * |jumps|)`.
    pub fn apply_space(&self, h: &[f64]) -> Vec<f64> {
        let g = self.grid;
        (0..g.len())
            .map(|i| {
                let x = g.site(i);
                let hx = h[i];
                kahan_sum(self.jumps.iter().map(|(y, w)| {
                    let s = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
                    w * (h[g.index_of(&s)] - hx)
                }))
            })
            .collect()
    }

    /// Spectral application, `-F^{-1}((1 - F(mu)) F(h))`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.fft
            .apply_multiplier(h, &self.symbol)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// `-<h, A_N h>` in the Fourier form `(1/N^d) sum |F(h)(z)|^2 (1 - F(mu)(z/N))`.
    pub fn quadratic_form(&self, h: &[f64]) -> f64 {
        let c = self.fft.forward_real(h);
        let s = kahan_sum(c.iter().zip(&self.symbol).map(|(c, s)| c.norm_sqr() * s));
        s / self.grid.len() as f64
    }

    /// `-<h, A_N h>` summed in the space domain.
    pub fn quadratic_form_space(&self, h: &[f64]) -> f64 {
        let ah = self.apply_space(h);
        -kahan_sum(h.iter().zip(&ah).map(|(a, b)| a * b))
    }
}

/// Convenience wrapper over [`TorusGenerator::apply`].
pub fn torus_generator_apply(law: &IncrementLaw, side: usize, h: &[f64]) -> Result<Vec<f64>> {
    Ok(TorusGenerator::new(law, side)?.apply(h))
}

/// Convenience wrapper over [`TorusGenerator::quadratic_form`].
pub fn quadratic_form(law: &IncrementLaw, side: usize, h: &[f64]) -> Result<f64> {
    Ok(TorusGenerator::new(law, side)?.quadratic_form(h))
}

/// `G = (lambda - A_N)^{-1}`, stored through its Fourier multipliers
/// `1 / (lambda + 1 - F(mu)(n / N))`.
#[derive(Clone, Debug)]
pub struct GreenKernel {
    grid: TorusGrid,
    lambda: f64,
    symbol: Vec<f64>,
    multipliers: Vec<f64>,
    row: Vec<f64>,
    fft: TorusFft,
}

impl GreenKernel {
    pub fn new(law: &IncrementLaw, side: usize, lambda: f64) -> Result<Self> {
        let grid = TorusGrid::new(law.dim(), side)?;
        Self::from_symbol(grid, law.torus_symbol(side)?, lambda)
    }

    /// Builds the kernel from a precomputed generator symbol `1 - F(mu)(n/N)`.
    pub fn from_symbol(grid: TorusGrid, symbol: Vec<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!(
                "killing rate must be positive and finite, got {lambda}"
            )));
        }
        if symbol.len() != grid.len() {
            return Err(invalid("symbol does not match grid"));
        }
        let multipliers: Vec<f64> = symbol.iter().map(|s| 1.0 / (lambda + s)).collect();
        let fft = TorusFft::new(grid);
        let row = fft.inverse_real(multipliers.iter().map(|&m| Complex64::new(m, 0.0)).collect());
        Ok(Self {
            grid,
            lambda,
            symbol,
            multipliers,
            row,
            fft,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// `G(0, x)` for every site `x`.
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub fn origin(&self) -> f64 {
        self.row[0]
    }

    pub fn value(&self, x: &Site, y: &Site) -> f64 {
        let d = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
        self.row[self.grid.index_of(&d)]
    }

    /// `G h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.fft.apply_multiplier(h, &self.multipliers)
    }

    /// `(lambda - A_N) h`.
    pub fn apply_inverse(&self, h: &[f64]) -> Vec<f64> {
        let sym: Vec<f64> = self.symbol.iter().map(|s| self.lambda + s).collect();
        self.fft.apply_multiplier(h, &sym)
    }

    /// `<h, G h>`.
    pub fn quadratic_form(&self, h: &[f64]) -> f64 {
        let c = self.fft.forward_real(h);
        kahan_sum(c.iter().zip(&self.multipliers).map(|(c, m)| c.norm_sqr() * m))
            / self.grid.len() as f64
    }

    /// Dense `N^d x N^d` covariance matrix, row-major. Small tori only.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let x = self.grid.site(i);
            for j in 0..n {
                out[i * n + j] = self.value(&x, &self.grid.site(j));
            }
        }
        out
    }
}

pub fn green_kernel(law: &IncrementLaw, side: usize, lambda: f64) -> Result<GreenKernel> {
    GreenKernel::new(law, side, lambda)
}

/// Growth of `G(0,0)` with the scale `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthClass {
    /// `beta^{alpha - d}`, for `d < alpha`.
    Power,
    /// `log beta`, for `d = alpha`.
    Logarithmic,
    /// `O(1)`, for `d > alpha`.
    Bounded,
}

impl GrowthClass {
    pub fn expected(dim: usize, alpha: f64) -> Self {
        let d = dim as f64;
        if (d - alpha).abs() < 1e-12 {
            GrowthClass::Logarithmic
        } else if d < alpha {
            GrowthClass::Power
        } else {
            GrowthClass::Bounded
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenScanRow {
    pub beta: f64,
    pub side: usize,
    pub lambda: f64,
    pub g00: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenScan {
    pub rows: Vec<GreenScanRow>,
    /// Set when some requested `beta` was dropped by the memory cap.
    pub truncated: bool,
    /// Slope of `log G(0,0)` against `log beta`.
    pub log_slope: f64,
    /// max / min of `G(0,0) / log beta` over the scan.
    pub log_ratio_spread: f64,
    /// Relative spread `(max - min) / max` of `G(0,0)` over the top octave of `beta`.
    pub top_octave_spread: f64,
    pub fitted_class: GrowthClass,
    pub expected_class: GrowthClass,
}

/// Torus side used for scale `beta` and cell size `r`: `r * beta` rounded to
/// the nearest even integer (at least 2).
pub fn scan_side(r: f64, beta: f64) -> usize {
    let s = (r * beta / 2.0).round() as usize * 2;
    s.max(2)
}

/// `G_{R beta, a beta^{-alpha}}(0,0)` over a list of scales.
pub fn green_origin_scan(law: &IncrementLaw, r: f64, a: f64, betas: &[f64]) -> Result<GreenScan> {
    if betas.is_empty() {
        return Err(invalid("empty beta list"));
    }
    if betas.iter().any(|&b| !(b >= 2.0)) {
        return Err(invalid("every beta must be >= 2"));
    }
    if betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("beta list must be increasing"));
    }
    if !(r > 0.0 && a > 0.0) {
        return Err(invalid("R and a must be positive"));
    }
    let dim = law.dim() as u32;
    let keep: Vec<f64> = betas
        .iter()
        .copied()
        .filter(|&b| (scan_side(r, b) as u128).pow(dim) <= MAX_TORUS_SITES as u128)
        .collect();
    let truncated = keep.len() < betas.len();
    if keep.is_empty() {
        return Err(Error::MemoryCap {
            sites: (scan_side(r, betas[0]) as u128).pow(dim),
            cap: MAX_TORUS_SITES,
        });
    }
    let rows: Vec<GreenScanRow> = keep
        .par_iter()
        .map(|&beta| {
            let side = scan_side(r, beta);
            let lambda = a * beta.powf(-law.alpha());
            let symbol = law.torus_symbol(side)?;
            let n = symbol.len() as f64;
            let g00 = kahan_sum(symbol.iter().map(|s| 1.0 / (lambda + s))) / n;
            Ok(GreenScanRow {
                beta,
                side,
                lambda,
                g00,
            })
        })
        .collect::<Result<_>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.beta.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.g00.ln()).collect();
    let log_slope = if rows.len() >= 2 {
        linear_fit(&lx, &ly).slope
    } else {
        f64::NAN
    };
    let ratios: Vec<f64> = rows.iter().map(|r| r.g00 / r.beta.ln()).collect();
    let log_ratio_spread = ratios.iter().copied().fold(0.0, f64::max)
        / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let top = rows.last().expect("nonempty").beta;
    let octave: Vec<f64> = rows
        .iter()
        .filter(|r| r.beta >= top / 2.0 - 1e-9)
        .map(|r| r.g00)
        .collect();
    let omax = octave.iter().copied().fold(0.0, f64::max);
    let omin = octave.iter().copied().fold(f64::INFINITY, f64::min);
    let top_octave_spread = (omax - omin) / omax;
    let fitted_class = classify_growth(&rows, log_slope);
    Ok(GreenScan {
        rows,
        truncated,
        log_slope,
        log_ratio_spread,
        top_octave_spread,
        fitted_class,
        expected_class: GrowthClass::expected(law.dim(), law.alpha()),
    })
}

/// Picks the growth class from the local log-log slope over the top half of
/// the scan: a power law keeps a constant slope, `log beta` has slope
/// `1 / log beta`, and a bounded sequence has a slope decaying faster.
fn classify_growth(rows: &[GreenScanRow], log_slope: f64) -> GrowthClass {
    if rows.len() < 3 {
        return if log_slope > 0.3 {
            GrowthClass::Power
        } else {
            GrowthClass::Bounded
        };
    }
    let half = &rows[rows.len() / 2..];
    let lx: Vec<f64> = half.iter().map(|r| r.beta.ln()).collect();
    let ly: Vec<f64> = half.iter().map(|r| r.g00.ln()).collect();
    let slope = linear_fit(&lx, &ly).slope;
    let mid_log = lx.iter().sum::<f64>() / lx.len() as f64;
    if slope > 0.3 {
        GrowthClass::Power
    } else if slope * mid_log > 0.5 {
        // A `log beta` sequence has `slope * log beta ~ 1`.
        GrowthClass::Logarithmic
    } else {
        GrowthClass::Bounded
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatKernelRow {
    pub t: f64,
    pub row_sum: f64,
    /// `max_x p_t(0,x) / min(t^{-d/alpha}, t / |x|^{d + alpha})` at this `t`.
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatKernelCheck {
    pub rows: Vec<HeatKernelRow>,
    pub kappa_hat: f64,
    /// `(t, site)` pairs needing `kappa > 100`.
    pub violations: Vec<(f64, Site)>,
}

/// Empirical constant of the upper heat-kernel bound on `T_N`.
pub fn heat_kernel_bound_check(law: &IncrementLaw, side: usize, ts: &[f64]) -> Result<HeatKernelCheck> {
    if ts.iter().any(|&t| !(t >= 0.1)) {
        return Err(invalid("heat-kernel check needs t >= 0.1"));
    }
    let grid = TorusGrid::new(law.dim(), side)?;
    let symbol = law.torus_symbol(side)?;
    let fft = TorusFft::new(grid);
    let d = law.dim() as f64;
    let alpha = law.alpha();
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for &t in ts {
        let p = fft.inverse_real(
            symbol
                .iter()
                .map(|s| Complex64::new((-t * s).exp(), 0.0))
                .collect(),
        );
        let row_sum = kahan_sum(p.iter().copied());
        let mut kappa: f64 = 0.0;
        for (i, &v) in p.iter().enumerate() {
            let r = grid.torus_norm(i);
            let mut bound = t.powf(-d / alpha);
            if r > 0.0 {
                bound = bound.min(t / r.powf(d + alpha));
            }
            let k = v / bound;
            if k > 100.0 {
                violations.push((t, grid.centered(i)));
            }
            kappa = kappa.max(k);
        }
        rows.push(HeatKernelRow { t, row_sum, kappa });
    }
    let kappa_hat = rows.iter().map(|r| r.kappa).fold(0.0, f64::max);
    Ok(HeatKernelCheck {
        rows,
        kappa_hat,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    /// Dense generator matrix built entry by entry from the periodized law.
    fn dense_generator(law: &IncrementLaw, side: usize) -> DMatrix<f64> {
        let grid = TorusGrid::new(law.dim(), side).unwrap();
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        for (z, w) in law.entries() {
            for i in 0..n {
                let x = grid.site(i);
                let j = grid.index_of(&[x[0] + z[0], x[1] + z[1], x[2] + z[2]]);
                m[(i, j)] += w;
                m[(i, i)] -= w;
            }
        }
        m
    }

    #[test]
    fn finite_range_char_function_closed_form() {
        let law = IncrementLaw::finite_range(1).unwrap();
        for &w in &[0.0, 0.1, 0.25, 0.37, 0.5] {
            let expect = 0.75 * (2.0 * PI * w).cos() + 0.25 * (4.0 * PI * w).cos();
            assert!((law.char_function(&[w]) - expect).abs() < 1e-15);
        }
        assert!((law.char_function(&[0.5]) + 0.5).abs() < 1e-15);
        assert_eq!(law.char_function(&[0.0]), 1.0);
    }

    #[test]
    fn power_tail_char_function_matches_direct_sum() {
        let law = IncrementLaw::power_tail(1, 1.0, Some(10_000)).unwrap();
        let norm: f64 = (1..=10_000).map(|x| 2.0 / (x as f64).powi(2)).sum();
        let direct: f64 = (1..=10_000)
            .map(|x| 2.0 / (x as f64).powi(2) / norm * (2.0 * PI * 0.3 * x as f64).cos())
            .sum();
        assert!((law.char_function(&[0.3]) - direct).abs() < 1e-10);
        assert!((law.char_function(&[0.0]) - 1.0).abs() < 1e-12);
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn char_function_even_and_periodic() {
        let law = IncrementLaw::power_tail(2, 1.0, Some(30)).unwrap();
        let w = [0.13, -0.31, 0.0];
        let f = law.char_function(&w);
        assert!((law.char_function(&[-0.13, 0.31, 0.0]) - f).abs() < 1e-13);
        assert!((law.char_function(&[1.13, -2.31, 0.0]) - f).abs() < 1e-11);
        assert!(f.abs() <= 1.0);
    }

    #[test]
    fn one_minus_char_agrees_with_char() {
        let law = IncrementLaw::power_tail(1, 1.5, Some(500)).unwrap();
        for &w in &[0.05, 0.2, 0.45] {
            let a = 1.0 - law.char_function(&[w]);
            assert!((law.one_minus_char(&[w]) - a).abs() < 1e-13);
        }
    }

    #[test]
    fn sigma_of_finite_range_law() {
        let law = IncrementLaw::finite_range(1).unwrap();
        assert!((law.sigma() - 3.5 * PI * PI).abs() < 1e-12);
        let cal = calibrate_stable_coefficient(&law);
        assert!((cal.alpha_hat - 2.0).abs() < 0.01);
        assert!((cal.sigma - 3.5 * PI * PI).abs() / (3.5 * PI * PI) < 1e-6);
    }

    #[test]
    fn unit_sigma_by_construction() {
        // Sites +-1 with mass m and the rest at the origin: sum x^2 mu = 2m.
        let m = 1.0 / (4.0 * PI * PI);
        let law = IncrementLaw::custom(1, 2.0, vec![([1, 0, 0], m), ([-1, 0, 0], m), ([0, 0, 0], 1.0 - 2.0 * m)])
            .unwrap();
        assert!((law.sigma() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn power_tail_index_one_calibrates_to_closed_form() {
        // sum_{x>=1} (1 - cos(x th)) / x^2 = pi th / 2 - th^2 / 4 on [0, 2 pi], and
        // the normalization is 3 / pi^2, so 1 - F(u) = 6 u (1 - u). Truncation at
        // T removes about (6 / pi^2) / T from 1 - F(u), a relative 1e-3 at u = 1e-4.
        let law = IncrementLaw::power_tail(1, 1.0, None).unwrap();
        let u = 0.01;
        assert!((law.one_minus_char(&[u]) - 6.0 * u * (1.0 - u)).abs() < 1e-6);
        let cal = law.calibration();
        assert!((cal.sigma - 6.0).abs() < 6e-3, "sigma {}", cal.sigma);
        assert!((cal.alpha_hat - 1.0).abs() < 0.01);
    }

    #[test]
    fn power_tail_index_fit() {
        let law = IncrementLaw::power_tail(1, 1.5, Some(1_000_000)).unwrap();
        let cal = law.calibration();
        assert!((cal.alpha_hat - 1.5).abs() < 0.03, "alpha_hat {}", cal.alpha_hat);
        assert!(cal.in_stable_domain);
    }

    #[test]
    fn hypotheses() {
        let fr = IncrementLaw::finite_range(1).unwrap().check_hypotheses();
        assert!(fr.non_arithmetic && fr.stable_domain && fr.mass_defect < 1e-12);
        let nn = IncrementLaw::nearest_neighbor(1).unwrap().check_hypotheses();
        assert!(!nn.non_arithmetic);
        let pt = IncrementLaw::power_tail(2, 1.0, Some(60)).unwrap().check_hypotheses();
        assert!(pt.non_arithmetic);
        let (c1, c2) = (pt.tail_c1.unwrap(), pt.tail_c2.unwrap());
        assert!((c1 - c2).abs() / c2 < 1e-9);
        let fr2 = IncrementLaw::finite_range(2).unwrap().check_hypotheses();
        assert!(fr2.non_arithmetic);
    }

    #[test]
    fn rejects_asymmetric_and_unnormalized() {
        assert!(IncrementLaw::custom(1, 2.0, vec![([1, 0, 0], 1.0)]).is_err());
        assert!(IncrementLaw::custom(1, 2.0, vec![([1, 0, 0], 0.3), ([-1, 0, 0], 0.3)]).is_err());
        assert!(IncrementLaw::power_tail(1, 2.0, None).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let law = IncrementLaw::power_tail(1, 1.5, Some(1000)).unwrap();
        let text = law.spec().to_text();
        let back = IncrementLaw::from_spec(&LawSpec::from_text(&text).unwrap()).unwrap();
        assert_eq!(back.kind(), LawKind::PowerTail);
        assert_eq!(back.truncation(), Some(1000));
        assert!((back.char_function(&[0.2]) - law.char_function(&[0.2])).abs() < 1e-15);
    }

    #[test]
    fn generator_two_site_example() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let gen = TorusGenerator::new(&law, 2).unwrap();
        let h = [1.0, 0.0];
        let a = gen.apply(&h);
        assert!((a[0] + 1.0).abs() < 1e-15 && (a[1] - 1.0).abs() < 1e-15);
        assert_eq!(gen.apply_space(&h), vec![-1.0, 1.0]);
        assert!((gen.quadratic_form(&h) - 1.0).abs() < 1e-15);
        let c = gen.apply(&[3.0, 3.0]);
        assert!(c.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn generator_space_and_spectral_agree() {
        for law in [
            IncrementLaw::finite_range(2).unwrap(),
            IncrementLaw::power_tail(1, 1.0, Some(100)).unwrap(),
        ] {
            let side = 8;
            let gen = TorusGenerator::new(&law, side).unwrap();
            let n = gen.grid().len();
            let h = random_real(n, 5);
            let dense = dense_generator(&law, side);
            let hv = nalgebra::DVector::from_vec(h.clone());
            let oracle = &dense * &hv;
            for (a, b) in gen.apply(&h).iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            let q_space = -hv.dot(&oracle);
            let q = gen.quadratic_form(&h);
            assert!((q - q_space).abs() / q < 1e-10);
            assert!((gen.quadratic_form_space(&h) - q).abs() / q < 1e-10);
        }
    }

    #[test]
    fn green_two_site() {
        let law = IncrementLaw::nearest_neighbor(1).unwrap();
        let g = GreenKernel::new(&law, 2, 1.0).unwrap();
        assert!((g.origin() - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.value(&[0, 0, 0], &[1, 0, 0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!(GreenKernel::new(&law, 2, 0.0).is_err());
    }

    #[test]
    fn green_matches_dense_inverse() {
        let law = IncrementLaw::power_tail(1, 1.0, Some(1000)).unwrap();
        let side = 8;
        let g = GreenKernel::new(&law, side, 0.5).unwrap();
        let a = dense_generator(&law, side);
        let m = DMatrix::identity(side, side) * 0.5 - a;
        let inv = m.try_inverse().unwrap();
        let dense = g.dense();
        for i in 0..side {
            for j in 0..side {
                assert!((dense[i * side + j] - inv[(i, j)]).abs() < 1e-10);
            }
        }
        let col = g.apply(&[1.0, 0., 0., 0., 0., 0., 0., 0.]);
        let back = g.apply_inverse(&col);
        assert!((back[0] - 1.0).abs() < 1e-12 && back[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn green_limits_and_monotonicity() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let big = GreenKernel::new(&law, 16, 1e8).unwrap();
        assert!((big.origin() * 1e8 - 1.0).abs() < 1e-6);
        let mut last = f64::INFINITY;
        for lam in [0.01, 0.1, 1.0, 10.0] {
            let g = GreenKernel::new(&law, 16, lam).unwrap();
            assert!(g.origin() <= last);
            assert!(g.row().iter().all(|&v| v <= g.origin() + 1e-15));
            last = g.origin();
        }
    }

    #[test]
    fn green_scan_power_class() {
        let law = IncrementLaw::finite_range(1).unwrap();
        let betas: Vec<f64> = (3..=9).map(|k| 2f64.powi(k)).collect();
        let scan = green_origin_scan(&law, 2.0, 1.0, &betas).unwrap();
        assert!((scan.log_slope - 1.0).abs() < 0.1, "slope {}", scan.log_slope);
        assert_eq!(scan.fitted_class, GrowthClass::Power);
        assert!(green_origin_scan(&law, 2.0, 1.0, &[]).is_err());
    }

    #[test]
    fn heat_kernel_rows_are_stochastic() {
        let law = IncrementLaw::power_tail(1, 1.0, Some(100_000)).unwrap();
        let check = heat_kernel_bound_check(&law, 256, &[1.0, 4.0, 16.0]).unwrap();
        for r in &check.rows {
            assert!((r.row_sum - 1.0).abs() < 1e-10);
        }
        assert!(check.kappa_hat.is_finite());
        assert!(check.violations.is_empty());
    }
}
