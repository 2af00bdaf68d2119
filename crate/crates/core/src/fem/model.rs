use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SpaceMesh;

/// A point in one or two space dimensions; 1D points keep `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point(pub [f64; 2]);

impl Point {
    pub fn new1(x: f64) -> Self {
        Point([x, 0.0])
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Point([x, y])
    }

    pub fn from_slice(c: &[f64]) -> Self {
        match c {
            [x] => Point::new1(*x),
            [x, y, ..] => Point::new2(*x, *y),
            [] => Point::default(),
        }
    }

    pub fn coords(&self, dim: usize) -> &[f64] {
        &self.0[..dim]
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn translated(&self, shift: &[f64]) -> Point {
        let mut p = *self;
        for (c, s) in p.0.iter_mut().zip(shift) {
            *c += s;
        }
        p
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum InitialCondition {
    #[default]
    Zero,
    Nodal(Vec<f64>),
}

/// Coefficients and time window of `u_t - Δu + A·∇u + μu = Σ λ_k δ_{x_k}` with
/// homogeneous Neumann data on a box `(0, L)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub dim: usize,
    pub domain_length: f64,
    pub advection: Vec<f64>,
    pub reaction: f64,
    pub horizon: f64,
    pub support_end: f64,
    pub obs_start: f64,
    pub initial_condition: InitialCondition,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::InvalidConfig(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        if self.advection.len() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "advection has {} components for dim {}",
                self.advection.len(),
                self.dim
            )));
        }
        if !(self.domain_length > 0.0) {
            return Err(Error::InvalidConfig("domain_length must be positive".into()));
        }
        if !(0.0 < self.support_end && self.support_end < self.obs_start && self.obs_start < self.horizon)
        {
            return Err(Error::InvalidConfig(format!(
                "need 0 < T0 < T1 < T, got T0={}, T1={}, T={}",
                self.support_end, self.obs_start, self.horizon
            )));
        }
        Ok(())
    }

    pub fn advection_norm_sq(&self) -> f64 {
        self.advection.iter().map(|a| a * a).sum()
    }

    /// `μ + |A|²/4`, the shift that makes `e^{-A·x/2}` factor out of the adjoint operator.
    pub fn effective_reaction(&self) -> f64 {
        self.reaction + 0.25 * self.advection_norm_sq()
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain_length.powi(self.dim as i32)
    }

    pub fn advection_point(&self) -> Point {
        Point::from_slice(&self.advection)
    }
}

/// `N` point sources with amplitudes sampled on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub locations: Vec<Point>,
    pub amplitude_grid: Vec<f64>,
    pub amplitudes: Vec<Vec<f64>>,
}

impl SourceModel {
    pub fn new(locations: Vec<Point>, amplitude_grid: Vec<f64>, amplitudes: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self {
            locations,
            amplitude_grid,
            amplitudes,
        };
        model.validate_shape()?;
        Ok(model)
    }

    /// Samples closures `λ_k(t)` on `grid`.
    pub fn from_fns(locations: Vec<Point>, grid: &[f64], amps: &[&dyn Fn(f64) -> f64]) -> Result<Self> {
        let amplitudes = amps.iter().map(|f| grid.iter().map(|&t| f(t)).collect()).collect();
        Self::new(locations, grid.to_vec(), amplitudes)
    }

    pub fn n_sources(&self) -> usize {
        self.locations.len()
    }

    fn validate_shape(&self) -> Result<()> {
        if self.amplitudes.len() != self.locations.len() {
            return Err(Error::InvalidConfig(format!(
                "{} amplitude series for {} sources",
                self.amplitudes.len(),
                self.locations.len()
            )));
        }
        if self.amplitude_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("amplitude grid must be increasing".into()));
        }
        for a in &self.amplitudes {
            if a.len() != self.amplitude_grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.amplitude_grid.len(),
                    found: a.len(),
                });
            }
        }
        Ok(())
    }

    /// Checks the 2h interior margin and, when `strict_support` is set, that
    /// amplitudes vanish after `support_end`.
    pub fn validate(&self, mesh: &SpaceMesh, config: &ProblemConfig, strict_support: bool) -> Result<()> {
        self.validate_shape()?;
        let margin = 2.0 * mesh.mesh_size - 1e-12;
        for p in &self.locations {
            if mesh.distance_to_boundary(p) < margin {
                return Err(Error::InvalidConfig(format!(
                    "source {:?} closer than 2h to the boundary",
                    p.coords(mesh.dim)
                )));
            }
        }
        if strict_support {
            for a in &self.amplitudes {
                for (t, v) in self.amplitude_grid.iter().zip(a) {
                    if *t > config.support_end && v.abs() > 1e-12 {
                        return Err(Error::InvalidConfig(format!(
                            "amplitude {v} at t={t} violates support (0, {})",
                            config.support_end
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Linear interpolation of source `k` at time `t`, held constant outside the grid.
    pub fn amplitude_at(&self, k: usize, t: f64) -> f64 {
        interpolate(&self.amplitude_grid, &self.amplitudes[k], t)
    }

    /// Largest |λ_k(t)| over samples after `t0`; the support violation of condition
    /// `λ = 0` on `(T0, T)` for amplitudes that only decay.
    pub fn support_violation(&self, t0: f64) -> f64 {
        self.amplitudes
            .iter()
            .flat_map(|a| {
                self.amplitude_grid
                    .iter()
                    .zip(a)
                    .filter(move |(t, _)| **t > t0)
                    .map(|(_, v)| v.abs())
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn interpolate(grid: &[f64], values: &[f64], t: f64) -> f64 {
    match grid.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            if t <= grid[0] {
                return values[0];
            }
            if t >= grid[n - 1] {
                return values[n - 1];
            }
            let i = grid.partition_point(|&g| g <= t).saturating_sub(1).min(n - 2);
            let w = (t - grid[i]) / (grid[i + 1] - grid[i]);
            values[i] * (1.0 - w) + values[i + 1] * w
        }
    }
}
