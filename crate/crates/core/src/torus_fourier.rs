//! Discrete Fourier analysis on the torus `T_N = (Z / N Z)^d`.
//!
//! Conventions: the forward transform is unnormalized,
//! `F(u)(n) = sum_k u(k) exp(-2 i pi <k, n> / N)`, and the inverse carries the
//! `1 / N^d` factor. Frequencies are reported in the centered window
//! `[-N/2, N/2)^d` for even `N` and `[-(N-1)/2, (N-1)/2]^d` for odd `N`;
//! storage uses the usual FFT ordering.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point of `Z^d`, `d <= 3`; unused trailing coordinates are zero.
pub type Site = [i64; 3];

pub const MAX_DIM: usize = 3;

/// Largest torus (in sites) any module will allocate.
pub const MAX_TORUS_SITES: u64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    side: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid(format!("dimension must be 1..=3, got {dim}")));
        }
        if side == 0 {
            return Err(invalid("torus side must be positive"));
        }
        let sites = (side as u128).pow(dim as u32);
        if sites > MAX_TORUS_SITES as u128 {
            return Err(Error::MemoryCap {
                sites,
                cap: MAX_TORUS_SITES,
            });
        }
        Ok(Self { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites `N^d`.
    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Storage index of a site of `Z^d`, reduced modulo `N`.
    pub fn index_of(&self, site: &Site) -> usize {
        let n = self.side as i64;
        let mut idx = 0usize;
        for c in site.iter().take(self.dim) {
            idx = idx * self.side + c.rem_euclid(n) as usize;
        }
        idx
    }

    /// Coordinates in `{0, .., N-1}^d` of a storage index.
    pub fn site(&self, mut index: usize) -> Site {
        let mut s = [0i64; 3];
        for axis in (0..self.dim).rev() {
            s[axis] = (index % self.side) as i64;
            index /= self.side;
        }
        s
    }

    /// Representative of a storage index in the centered window; used both for
    /// frequencies and for minimal-image displacements.
    pub fn centered(&self, index: usize) -> Site {
        let mut s = self.site(index);
        let half = self.side.div_ceil(2) as i64;
        for c in s.iter_mut().take(self.dim) {
            if *c >= half {
                *c -= self.side as i64;
            }
        }
        s
    }

    pub fn frequency(&self, index: usize) -> Site {
        self.centered(index)
    }

    /// Euclidean norm of the minimal-image representative.
    pub fn torus_norm(&self, index: usize) -> f64 {
        let c = self.centered(index);
        c.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt()
    }
}

impl fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T_{}^{}", self.side, self.dim)
    }
}

/// Complex-valued function on a torus, in space representation.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    grid: TorusGrid,
    values: Vec<Complex64>,
}

impl LatticeField {
    pub fn new(grid: TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "field has {} values, grid {} needs {}",
                values.len(),
                grid,
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_real(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(Site) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.site(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, site: &Site) -> Complex64 {
        self.values[self.grid.index_of(site)]
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.values.iter().all(|v| v.im.abs() <= tol)
    }
}

/// Fourier coefficients of a torus field, stored in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(invalid("coefficient count does not match grid"));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient at an integer frequency (taken modulo `N`).
    pub fn at_frequency(&self, n: &Site) -> Complex64 {
        self.coeffs[self.grid.index_of(n)]
    }

    /// `F(-n) = conj(F(n))` for every frequency, the signature of a real field.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
        (0..self.grid.len()).all(|i| {
            let n = self.grid.site(i);
            let neg = [-n[0], -n[1], -n[2]];
            let j = self.grid.index_of(&neg);
            (self.coeffs[j] - self.coeffs[i].conj()).norm() <= tol * scale
        })
    }
}

/// Cached multi-dimensional FFT for one torus grid.
#[derive(Clone)]
pub struct TorusFft {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusFft").field("grid", &self.grid).finish()
    }
}

impl TorusFft {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.side());
        let inverse = planner.plan_fft_inverse(grid.side());
        Self {
            grid,
            forward,
            inverse,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward);
    }

    /// Inverse transform including the `1 / N^d` factor, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real field.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut coeffs);
        coeffs.into_iter().map(|c| c.re).collect()
    }

    /// Applies the translation-invariant operator with real Fourier
    /// multiplier `symbol` (FFT order) to a real field.
    pub fn apply_multiplier(&self, values: &[f64], symbol: &[f64]) -> Vec<f64> {
        let mut buf = self.forward_real(values);
        for (c, s) in buf.iter_mut().zip(symbol) {
            *c *= *s;
        }
        self.inverse_real(buf)
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.side();
        let len = self.grid.len();
        assert_eq!(buf.len(), len, "buffer does not match grid");
        if n == 1 {
            return;
        }
        let dim = self.grid.dim();
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(buf, &mut scratch);
                continue;
            }
            // Gather every line along `axis` into contiguous storage.
            let block = stride * n;
            let mut lines = vec![Complex64::new(0.0, 0.0); len];
            let mut line = 0;
            for outer in (0..len).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for j in 0..n {
                        lines[line * n + j] = buf[base + j * stride];
                    }
                    line += 1;
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            let mut line = 0;
            for outer in (0..len).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for j in 0..n {
                        buf[base + j * stride] = lines[line * n + j];
                    }
                    line += 1;
                }
            }
        }
    }
}

pub fn dft_forward(field: &LatticeField) -> SpectralField {
    let fft = TorusFft::new(field.grid);
    let mut coeffs = field.values.clone();
    fft.forward(&mut coeffs);
    SpectralField {
        grid: field.grid,
        coeffs,
    }
}

pub fn dft_inverse(spec: &SpectralField) -> LatticeField {
    let fft = TorusFft::new(spec.grid);
    let mut values = spec.coeffs.clone();
    fft.inverse(&mut values);
    LatticeField {
        grid: spec.grid,
        values,
    }
}

/// `(sum_x |u(x)|^p)^(1/p)` for real `p >= 1`.
pub fn lp_norm(field: &LatticeField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(power_sum(field.values.iter().map(|v| v.norm()), p).powf(1.0 / p))
}

/// Same as [`lp_norm`] for a real slice.
pub fn lp_norm_real(values: &[f64], p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(power_sum(values.iter().map(|v| v.abs()), p).powf(1.0 / p))
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(invalid(format!("l_p norm needs finite p >= 1, got {p}")));
    }
    Ok(())
}

fn power_sum(abs: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 1.0 {
        abs.sum()
    } else if p == 2.0 {
        abs.map(|a| a * a).sum()
    } else {
        abs.map(|a| a.powf(p)).sum()
    }
}

/// Periodization `g_N(x) = sum_z g(x + N z)` of a finitely supported map on `Z^d`.
pub fn periodize(
    dim: usize,
    entries: impl IntoIterator<Item = (Site, f64)>,
    side: usize,
) -> Result<LatticeField> {
    let grid = TorusGrid::new(dim, side)?;
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (site, w) in entries {
        values[grid.index_of(&site)].re += w;
    }
    LatticeField::new(grid, values)
}

/// Fourier series `F(g)(omega) = sum_z g(z) exp(-2 i pi <z, omega>)` of a
/// finitely supported map on `Z^d`.
pub fn series_transform(entries: &[(Site, f64)], omega: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (z, w) in entries {
        let phase: f64 = z.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum();
        acc += Complex64::from_polar(*w, -2.0 * PI * phase);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct YoungCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `N_p(u) <= N^{-d/q} N_q(F(u))` for `p > 2`, `q = p / (p - 1)`.
pub fn young_bound_check(field: &LatticeField, p: f64) -> Result<YoungCheck> {
    if !(p > 2.0) {
        return Err(invalid(format!("Young bound needs p > 2, got {p}")));
    }
    let q = p / (p - 1.0);
    let grid = field.grid;
    let lhs = lp_norm(field, p)?;
    let spec = dft_forward(field);
    let nq = power_sum(spec.coeffs.iter().map(|c| c.norm()), q).powf(1.0 / q);
    let rhs = (grid.side() as f64).powf(-(grid.dim() as f64) / q) * nq;
    Ok(YoungCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-10),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Literal double sum, independent of the FFT path.
    fn direct_dft(field: &LatticeField) -> Vec<Complex64> {
        let g = field.grid();
        let n = g.side() as f64;
        (0..g.len())
            .map(|ni| {
                let freq = g.site(ni);
                let mut acc = Complex64::new(0.0, 0.0);
                for ki in 0..g.len() {
                    let k = g.site(ki);
                    let dot: f64 = (0..g.dim()).map(|a| (k[a] * freq[a]) as f64).sum();
                    acc += field.values()[ki] * Complex64::from_polar(1.0, -2.0 * PI * dot / n);
                }
                acc
            })
            .collect()
    }

    fn random_field(grid: TorusGrid, seed: u64) -> LatticeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatticeField::from_fn(grid, |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn delta_transforms_to_ones() {
        let g = TorusGrid::new(1, 4).unwrap();
        let u = LatticeField::from_fn(g, |s| if s[0] == 0 { c(1.0) } else { c(0.0) });
        let f = dft_forward(&u);
        assert!(f.coeffs().iter().all(|v| (v - c(1.0)).norm() < 1e-15));
        let back = dft_inverse(&f);
        assert!((back.values()[0] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn constant_transforms_to_delta() {
        let g = TorusGrid::new(1, 4).unwrap();
        let u = LatticeField::from_fn(g, |_| c(1.0));
        let f = dft_forward(&u);
        assert!((f.at_frequency(&[0, 0, 0]) - c(4.0)).norm() < 1e-15);
        for i in 1..4 {
            assert!(f.coeffs()[i].norm() < 1e-15);
        }
        let spec = SpectralField::new(g, vec![c(4.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        let back = dft_inverse(&spec);
        assert!(back.values().iter().all(|v| (v - c(1.0)).norm() < 1e-15));
    }

    #[test]
    fn fft_matches_direct_sum_2d_and_3d() {
        for (dim, side) in [(2, 8), (3, 4), (2, 5)] {
            let g = TorusGrid::new(dim, side).unwrap();
            let u = random_field(g, 11 + dim as u64);
            let fast = dft_forward(&u);
            let slow = direct_dft(&u);
            for (a, b) in fast.coeffs().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12, "{dim}d side {side}");
            }
            let n2: f64 = u.values().iter().map(|v| v.norm_sqr()).sum();
            let f2: f64 = slow.iter().map(|v| v.norm_sqr()).sum();
            assert!((f2 - g.len() as f64 * n2).abs() / f2 < 1e-10);
        }
    }

    #[test]
    fn random_spectrum_round_trip() {
        let g = TorusGrid::new(1, 16).unwrap();
        let spec = SpectralField::new(g, random_field(g, 3).into_values()).unwrap();
        let there = dft_forward(&dft_inverse(&spec));
        for (a, b) in there.coeffs().iter().zip(spec.coeffs()) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn real_field_is_conjugate_symmetric() {
        let g = TorusGrid::new(2, 6).unwrap();
        let u = LatticeField::from_real(g, (0..36).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        assert!(dft_forward(&u).is_conjugate_symmetric(1e-12));
    }

    #[test]
    fn centered_window() {
        let g = TorusGrid::new(1, 4).unwrap();
        let f: Vec<i64> = (0..4).map(|i| g.frequency(i)[0]).collect();
        assert_eq!(f, vec![0, 1, -2, -1]);
        let g = TorusGrid::new(1, 5).unwrap();
        let f: Vec<i64> = (0..5).map(|i| g.frequency(i)[0]).collect();
        assert_eq!(f, vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn lp_norm_examples() {
        let g = TorusGrid::new(1, 8).unwrap();
        let point = LatticeField::from_fn(g, |s| if s[0] == 3 { c(5.0) } else { c(0.0) });
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert!((lp_norm(&point, p).unwrap() - 5.0).abs() < 1e-12);
        }
        let constant = LatticeField::from_fn(g, |_| c(0.5));
        for p in [1.0, 2.5, 4.0] {
            let expect = 0.5 * 8f64.powf(1.0 / p);
            assert!((lp_norm(&constant, p).unwrap() - expect).abs() < 1e-12);
        }
        let u = random_field(g, 9);
        let oracle = u.values().iter().map(|v| v.norm().powf(2.5)).sum::<f64>().powf(0.4);
        assert!((lp_norm(&u, 2.5).unwrap() - oracle).abs() < 1e-12);
        assert!(lp_norm(&u, 0.5).is_err());
    }

    #[test]
    fn periodize_examples() {
        let g4 = periodize(1, [([5, 0, 0], 1.0)], 4).unwrap();
        assert_eq!(g4.real_parts(), vec![0.0, 1.0, 0.0, 0.0]);
        let g2 = periodize(1, [([-1, 0, 0], 0.3), ([0, 0, 0], 0.5), ([1, 0, 0], 0.2)], 2).unwrap();
        assert_eq!(g2.real_parts(), vec![0.5, 0.5]);
    }

    #[test]
    fn periodization_links_series_and_torus_transform() {
        let entries: Vec<(Site, f64)> = (-20i64..=20)
            .map(|x| ([x, 0, 0], 0.5f64.powi(x.abs() as i32)))
            .collect();
        let gn = periodize(1, entries.iter().copied(), 8).unwrap();
        let f = dft_forward(&gn);
        for x in 0..8 {
            let series = series_transform(&entries, &[x as f64 / 8.0]);
            assert!((f.coeffs()[x] - series).norm() < 1e-12);
        }
    }

    #[test]
    fn young_extremals() {
        let g = TorusGrid::new(1, 8).unwrap();
        let delta = LatticeField::from_fn(g, |s| if s[0] == 0 { c(1.0) } else { c(0.0) });
        let y = young_bound_check(&delta, 4.0).unwrap();
        assert!((y.lhs - 1.0).abs() < 1e-12 && (y.rhs - 1.0).abs() < 1e-12 && y.holds);
        let ones = LatticeField::from_fn(g, |_| c(1.0));
        let y = young_bound_check(&ones, 4.0).unwrap();
        assert!((y.lhs - 8f64.powf(0.25)).abs() < 1e-12);
        assert!((y.rhs - 8f64.powf(0.25)).abs() < 1e-12);
        assert!(y.holds);
        assert!(young_bound_check(&ones, 2.0).is_err());
    }

    #[test]
    fn rejects_oversized_torus() {
        assert!(matches!(TorusGrid::new(3, 300), Err(Error::MemoryCap { .. })));
        assert!(TorusGrid::new(4, 2).is_err());
    }
}
