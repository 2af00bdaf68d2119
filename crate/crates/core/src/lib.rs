//! Simulation and recovery of time-dependent point sources in
//! advection-diffusion equations observed on the boundary.
//!
//! * [`sparse`]: CSR matrices and linear solvers.
//! * [`fem`]: meshes, P1 assembly, Dirac loads, boundary quadrature.
//! * [`forward`]: backward Euler propagation and analytic reference solutions.
//! * [`direct`]: reciprocity-gap probes, harmonic moments and Laplace-domain amplitude recovery.
//! * [`lm`]: Levenberg–Marquardt reconstruction of locations and amplitudes.
//! * [`harness`]: example problems, noise, error statistics and rate fits.

pub mod direct;
pub mod error;
pub mod fem;
pub mod forward;
pub mod harness;
pub mod lm;
mod quad;
pub mod sparse;

pub use error::{Error, Result};
