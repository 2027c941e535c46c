//! Principal eigenvalue of the tilted torus generator `A_N + beta^{-alpha} f(x / beta)`.

use serde::{Deserialize, Serialize};

use super::engine::{initial_fields, Constraint, SphereProblem, SolveOptions};
use crate::error::{invalid, Error, Result};
use crate::stats::kahan_sum;
use crate::torus_fourier::{TorusFft, TorusGrid};
use crate::walk_kernel::IncrementLaw;

/// Compactly supported continuous profiles `f` on `R^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    Zero,
    /// `height (1 - |y|^2 / radius^2)_+^2`.
    Bump { height: f64, radius: f64 },
    /// `-depth (1 - |y|^2 / radius^2)_+^2`.
    NegativeWell { depth: f64, radius: f64 },
}

impl Profile {
    pub fn eval(&self, y: &[f64]) -> f64 {
        let shape = |r: f64| {
            let s = 1.0 - y.iter().map(|v| v * v).sum::<f64>() / (r * r);
            if s > 0.0 {
                s * s
            } else {
                0.0
            }
        };
        match *self {
            Profile::Zero => 0.0,
            Profile::Bump { height, radius } => height * shape(radius),
            Profile::NegativeWell { depth, radius } => -depth * shape(radius),
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::Bump { radius, .. } | Profile::NegativeWell { radius, .. } => radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Zero => true,
            Profile::Bump { height: v, radius } | Profile::NegativeWell { depth: v, radius } => {
                v.is_finite() && radius > 0.0 && radius.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("profile needs finite height and positive radius"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TiltedEigen {
    /// Top eigenvalue of `A_N + V`, `V = beta^{-alpha} f(x / beta)`.
    pub eigenvalue: f64,
    /// `beta^alpha` times the eigenvalue.
    pub scaled: f64,
    /// `sup <g, (A_N + V) g>` over `|g|_2 = 1` from the descent solver.
    pub sup_form: f64,
    pub scaled_sup_form: f64,
    pub iterations: usize,
    pub residual: f64,
    pub sup_certified: bool,
    pub sup_residual: f64,
    pub sup_iterations: usize,
    /// `|eigenvalue - sup_form| / max(|eigenvalue|, |sup_form|)`.
    pub rel_gap: f64,
}

/// Power iteration with shift on `A_N + V + c`, `c = 2 + max |V|`, from the
/// constant vector; stops when `|H v - mu v|_2 <= 1e-10`.
pub fn tilted_principal_eigenvalue(
    law: &IncrementLaw,
    profile: Profile,
    beta: f64,
    side: usize,
    opts: &SolveOptions,
) -> Result<TiltedEigen> {
    profile.validate()?;
    if !(beta > 0.0) {
        return Err(invalid("beta must be positive"));
    }
    if 2.0 * profile.radius() * beta >= side as f64 {
        return Err(invalid("torus side must exceed the scaled support diameter of the profile"));
    }
    let grid = TorusGrid::new(law.dim(), side)?;
    let symbol = law.torus_symbol(side)?;
    let alpha = law.alpha();
    let scale = beta.powf(-alpha);
    let potential: Vec<f64> = (0..grid.len())
        .map(|i| {
            let c = grid.centered(i);
            let y: Vec<f64> = c.iter().take(grid.dim()).map(|&x| x as f64 / beta).collect();
            scale * profile.eval(&y)
        })
        .collect();
    let fft = TorusFft::new(grid);
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = fft.apply_multiplier(v, &symbol);
        for ((o, x), p) in out.iter_mut().zip(v).zip(&potential) {
            *o = -*o + p * x;
        }
        out
    };
    let shift = 2.0 + potential.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let n = grid.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let cap = 1_000_000;
    let mut residual = f64::INFINITY;
    let mut mu = 0.0;
    let mut iterations = cap;
    for it in 0..cap {
        let hv = apply(&v);
        mu = kahan_sum(hv.iter().zip(&v).map(|(a, b)| a * b));
        residual = kahan_sum(hv.iter().zip(&v).map(|(a, b)| (a - mu * b).powi(2))).sqrt();
        if residual <= 1e-10 {
            iterations = it;
            break;
        }
        let mut next: Vec<f64> = hv.iter().zip(&v).map(|(a, b)| a + shift * b).collect();
        let norm = kahan_sum(next.iter().map(|x| x * x)).sqrt();
        for x in next.iter_mut() {
            *x /= norm;
        }
        v = next;
    }
    if residual > 1e-10 {
        return Err(Error::Stagnation {
            iterations: cap,
            residual,
        });
    }
    // Sup form as a minimization of <g, (-A_N - V) g> on the unit l_2 sphere.
    let neg_potential: Vec<f64> = potential.iter().map(|p| -p).collect();
    let prob = SphereProblem::new(grid, symbol.clone(), Some(neg_potential), 1.0, 1.0, Constraint::Single);
    let width = (profile.radius() * beta).max(1.0);
    let res = prob
        .solve_many(initial_fields(grid, opts, width, true, None), opts)
        .ok_or_else(|| invalid("every restart failed"))?;
    let sup_form = -res.value;
    let denom = mu.abs().max(sup_form.abs()).max(f64::MIN_POSITIVE);
    Ok(TiltedEigen {
        eigenvalue: mu,
        scaled: mu / scale,
        sup_form,
        scaled_sup_form: sup_form / scale,
        iterations,
        residual,
        sup_certified: res.certified,
        sup_residual: res.residual,
        sup_iterations: res.iterations,
        rel_gap: if mu == 0.0 && sup_form.abs() < 1e-300 { 0.0 } else { (mu - sup_form).abs() / denom },
    })
}
