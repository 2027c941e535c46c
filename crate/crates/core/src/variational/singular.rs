//! Spectral versus singular-integral form of the fractional energy.

use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::stats::kahan_sum;
use crate::torus_fourier::{TorusFft, TorusGrid};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularCheck {
    /// `int |omega|^alpha |F g|^2`.
    pub spectral_energy: f64,
    /// `int int (g(x) - g(y))^2 / |x - y|^{d + alpha}`.
    pub singular_integral_energy: f64,
    /// Spectral over singular (NaN when both vanish).
    pub ratio: f64,
}

/// Evaluates both energies of a field sampled at the cell centers of
/// `[0, L]^d` (`M` cells per axis) and assumed to vanish outside the box.
///
/// The spectral side zero-pads the box to suppress periodic images. The
/// double integral is summed over cell pairs; each diagonal cell contributes
/// its Taylor term `|grad g|^2 (1/d) int_cell |z|^{2-d-alpha} dz`, and pairs
/// with one point outside the box reduce to `2 int g^2 W` with `W` the
/// kernel mass of the complement.
pub fn singular_integral_crosscheck(values: &[f64], dim: usize, alpha: f64, box_len: f64, m: usize) -> Result<SingularCheck> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid(format!("singular form needs alpha in (0, 2), got {alpha}")));
    }
    if !(1..=2).contains(&dim) {
        return Err(invalid("singular form implemented for d = 1, 2"));
    }
    let grid = TorusGrid::new(dim, m)?;
    if values.len() != grid.len() || !(box_len > 0.0) {
        return Err(invalid("field does not match the grid"));
    }
    let spectral = spectral_energy_padded(values, grid, box_len, alpha)?;
    let singular = match dim {
        1 => singular_1d(values, alpha, box_len),
        _ => singular_2d(values, alpha, box_len, m),
    };
    let ratio = if spectral == 0.0 && singular == 0.0 {
        f64::NAN
    } else {
        spectral / singular
    };
    Ok(SingularCheck {
        spectral_energy: spectral,
        singular_integral_energy: singular,
        ratio,
    })
}

fn spectral_energy_padded(values: &[f64], grid: TorusGrid, box_len: f64, alpha: f64) -> Result<f64> {
    let pad = if grid.dim() == 1 { 8 } else { 2 };
    let big = TorusGrid::new(grid.dim(), pad * grid.side())?;
    let mut buf = vec![0.0; big.len()];
    for (i, v) in values.iter().enumerate() {
        buf[big.index_of(&grid.site(i))] = *v;
    }
    let len = box_len * pad as f64;
    let h = box_len / grid.side() as f64;
    let hd = h.powi(grid.dim() as i32);
    let c = TorusFft::new(big).forward_real(&buf);
    Ok(kahan_sum(c.iter().enumerate().map(|(i, c)| {
        let f = big.frequency(i);
        let r2: f64 = f.iter().take(big.dim()).map(|&x| (x * x) as f64).sum();
        hd * (r2.sqrt() / len).powf(alpha) * c.norm_sqr()
    })) / big.len() as f64)
}

/// Spectral partial derivatives on the box, treated as periodic.
fn gradient(values: &[f64], grid: TorusGrid, box_len: f64) -> Vec<Vec<f64>> {
    let fft = TorusFft::new(grid);
    let c = fft.forward_real(values);
    (0..grid.dim())
        .map(|axis| {
            let mut d = c.clone();
            for (i, v) in d.iter_mut().enumerate() {
                let n = grid.frequency(i)[axis];
                let n = if grid.side() % 2 == 0 && n == -(grid.side() as i64) / 2 { 0 } else { n };
                *v *= num_complex::Complex64::new(0.0, 2.0 * PI * n as f64 / box_len);
            }
            fft.inverse_real(d)
        })
        .collect()
}

fn singular_1d(g: &[f64], alpha: f64, l: f64) -> f64 {
    let m = g.len();
    let h = l / m as f64;
    let grid = TorusGrid::new(1, m).unwrap();
    let grad = gradient(g, grid, l);
    let pairs: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            kahan_sum((0..m).filter(|&j| j != i).map(|j| {
                let dz = h * (i as f64 - j as f64).abs();
                (g[i] - g[j]).powi(2) * dz.powf(-1.0 - alpha)
            }))
        })
        .sum::<f64>()
        * h
        * h;
    // int_{-h/2}^{h/2} |z|^{1-alpha} dz
    let cell = 2.0 * (h / 2.0).powf(2.0 - alpha) / (2.0 - alpha);
    let diag = kahan_sum(grad[0].iter().map(|d| d * d * cell)) * h;
    let exterior = kahan_sum(g.iter().enumerate().map(|(i, v)| {
        let x = (i as f64 + 0.5) * h;
        v * v * (x.powf(-alpha) + (l - x).powf(-alpha)) / alpha
    })) * h;
    pairs + diag + 2.0 * exterior
}

/// `int_{[-1/2, 1/2]^2} |z|^{-alpha} dz`, by symmetry `8 int_0^{pi/4}`.
fn unit_cell_integral_2d(alpha: f64) -> f64 {
    let n = 4000;
    let step = PI / 4.0 / n as f64;
    let f = |t: f64| (0.5 / t.cos()).powf(2.0 - alpha) / (2.0 - alpha);
    // Simpson.
    let mut s = f(0.0) + f(PI / 4.0);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * step);
    }
    8.0 * s * step / 3.0
}

/// `int_{y outside [0,L]^2} |x - y|^{-2-alpha} dy = (1/alpha) int r_b(t)^{-alpha} dt`.
fn exterior_weight_2d(x: [f64; 2], l: f64, alpha: f64, angles: usize) -> f64 {
    let step = 2.0 * PI / angles as f64;
    let sum = kahan_sum((0..angles).map(|k| {
        let t = (k as f64 + 0.5) * step;
        let (c, s) = (t.cos(), t.sin());
        let dist = |pos: f64, dir: f64| {
            if dir > 0.0 {
                (l - pos) / dir
            } else if dir < 0.0 {
                pos / -dir
            } else {
                f64::INFINITY
            }
        };
        dist(x[0], c).min(dist(x[1], s)).powf(-alpha)
    }));
    sum * step / alpha
}

fn singular_2d(g: &[f64], alpha: f64, l: f64, m: usize) -> f64 {
    let h = l / m as f64;
    let grid = TorusGrid::new(2, m).unwrap();
    let span = 2 * m - 1;
    let kernel: Vec<f64> = (0..span * span)
        .map(|k| {
            let (a, b) = ((k / span) as f64 - (m - 1) as f64, (k % span) as f64 - (m - 1) as f64);
            let r2 = (a * a + b * b) * h * h;
            if r2 == 0.0 {
                0.0
            } else {
                r2.powf(-(2.0 + alpha) / 2.0)
            }
        })
        .collect();
    let pairs: f64 = (0..m * m)
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i / m, i % m);
            let mut s = 0.0;
            for j in 0..m * m {
                let (jx, jy) = (j / m, j % m);
                let k = (ix + m - 1 - jx) * span + (iy + m - 1 - jy);
                let d = g[i] - g[j];
                s += d * d * kernel[k];
            }
            s
        })
        .sum::<f64>()
        * h.powi(4);
    let grad = gradient(g, grid, l);
    let cell = 0.5 * h.powf(2.0 - alpha) * unit_cell_integral_2d(alpha);
    let diag = kahan_sum((0..m * m).map(|i| (grad[0][i].powi(2) + grad[1][i].powi(2)) * cell)) * h * h;
    let exterior: f64 = (0..m * m)
        .into_par_iter()
        .map(|i| {
            if g[i] == 0.0 {
                return 0.0;
            }
            let x = [((i / m) as f64 + 0.5) * h, ((i % m) as f64 + 0.5) * h];
            g[i] * g[i] * exterior_weight_2d(x, l, alpha, 2048)
        })
        .sum::<f64>()
        * h
        * h;
    pairs + diag + 2.0 * exterior
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cell_integral_at_alpha_one() {
        // int_{[-1/2,1/2]^2} 1/|z| dz = 4 ln(1 + sqrt 2).
        let exact = 4.0 * (1.0 + 2f64.sqrt()).ln();
        assert!((unit_cell_integral_2d(1.0) - exact).abs() < 1e-9);
    }

    #[test]
    fn exterior_weight_of_disc_inside_square() {
        // At the center of a square of side 2, the complement of the square
        // has kernel mass below that of the complement of the inscribed disc
        // (2 pi / alpha) and above that of the circumscribed disc.
        let w = exterior_weight_2d([1.0, 1.0], 2.0, 1.0, 4096);
        assert!(w < 2.0 * PI && w > 2.0 * PI / 2f64.sqrt());
    }
}
