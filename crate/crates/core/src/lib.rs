//! Numerical laboratory for self-intersection local times of stable random
//! walks: torus Fourier analysis, walk kernels, path simulation, Gaussian
//! fields, variational constants and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
#![allow(clippy::too_many_arguments, clippy::type_complexity)]

pub mod error;
pub mod stats;
pub mod torus_fourier;
pub mod walk_kernel;
pub mod walk_simulator;
pub mod gaussian_field;
pub mod variational;
pub mod harness;
pub mod suite;

pub use error::{Error, Result};
