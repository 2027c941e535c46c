//! Legendre duality between the exponential-moment limit and the rate.

use serde::Serialize;

use super::conjugate;
use crate::error::{invalid, Result};

/// `sup_{theta > 0} { theta y - (theta / rho)^gamma }` for `gamma > 1`,
/// computed on a log-spaced grid of `points` values and refined by golden
/// section inside the best cell.
pub fn legendre_transform(y: f64, rho: f64, gamma: f64, points: usize) -> f64 {
    let f = |t: f64| t * y - (t / rho).powf(gamma);
    let (lo, hi) = ((1e-8 * rho).ln(), (1e8 * rho).ln());
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..points {
        let v = f((lo + step * i as f64).exp());
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    let mut a = (lo + step * best.saturating_sub(1) as f64).exp();
    let mut b = (lo + step * (best + 1).min(points - 1) as f64).exp();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    f(0.5 * (a + b)).max(best_v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LegendreRow {
    pub x: f64,
    /// Numerical transform of the moment limit at `x^{1/p}`.
    pub transform: f64,
    /// `x^{alpha/(d(p-1))} chi`.
    pub rate: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LegendreReport {
    pub rows: Vec<LegendreRow>,
    pub max_rel_err: f64,
    /// Transform at `2x` over transform at `x`, for the first sampled `x`.
    pub doubling_ratio: f64,
    /// `2^{alpha/(d(p-1))}`.
    pub expected_doubling_ratio: f64,
    pub consistent: bool,
}

/// Checks `sup_theta {theta x^{1/p} - (theta/rho)^{aq/(aq-d)}} = x^{alpha/(d(p-1))} chi`
/// at each `x`, with tolerance `tol` on the relative error.
pub fn legendre_consistency(
    dim: usize,
    alpha: f64,
    p: f64,
    chi: f64,
    rho: f64,
    xs: &[f64],
    points: usize,
    tol: f64,
) -> Result<LegendreReport> {
    super::check_subcritical(dim, alpha, p)?;
    if xs.is_empty() || xs.iter().any(|&x| !(x > 0.0)) || points < 3 {
        return Err(invalid("need positive sample points and at least 3 grid points"));
    }
    let d = dim as f64;
    let aq = alpha * conjugate(p);
    let gamma = aq / (aq - d);
    let expo = alpha / (d * (p - 1.0));
    let rows: Vec<LegendreRow> = xs
        .iter()
        .map(|&x| {
            let transform = legendre_transform(x.powf(1.0 / p), rho, gamma, points);
            let rate = x.powf(expo) * chi;
            LegendreRow {
                x,
                transform,
                rate,
                rel_err: (transform - rate).abs() / rate,
            }
        })
        .collect();
    let max_rel_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let x0 = xs[0];
    let doubling_ratio = legendre_transform((2.0 * x0).powf(1.0 / p), rho, gamma, points)
        / legendre_transform(x0.powf(1.0 / p), rho, gamma, points);
    Ok(LegendreReport {
        rows,
        max_rel_err,
        doubling_ratio,
        expected_doubling_ratio: 2f64.powf(expo),
        consistent: max_rel_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_matches_closed_form() {
        // sup {t y - (t/r)^g} = (g - 1) g^{-g/(g-1)} (r y)^{g/(g-1)}.
        let (y, r, g): (f64, f64, f64) = (1.3, 0.8, 3.0);
        let exact = (g - 1.0) * g.powf(-g / (g - 1.0)) * (r * y).powf(g / (g - 1.0));
        assert!((legendre_transform(y, r, g, 200_001) - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn related_constants_are_consistent() {
        let chi = 0.37;
        let rho = super::super::rho_from_chi(1, 2.0, 2.0, chi);
        let rep = legendre_consistency(1, 2.0, 2.0, chi, rho, &[0.5, 1.0, 3.0], 200_001, 1e-9).unwrap();
        assert!(rep.consistent, "{rep:?}");
        assert!((rep.doubling_ratio - rep.expected_doubling_ratio).abs() < 1e-10);
    }
}
