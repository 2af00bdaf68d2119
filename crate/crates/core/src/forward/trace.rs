use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t0, t0 + dt, ..., t0 + n_steps·dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_end > t0) {
            return Err(Error::IncompatibleGrid(format!(
                "invalid time grid [{t0}, {t_end}] with dt = {dt}"
            )));
        }
        let ratio = (t_end - t0) / dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::IncompatibleGrid(format!(
                "dt = {dt} does not divide [{t0}, {t_end}]"
            )));
        }
        let n_steps = n as usize;
        Ok(Self {
            t0,
            dt: (t_end - t0) / n_steps as f64,
            n_steps,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.n_steps as f64 * self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Trapezoid weights on the grid nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n_steps + 1];
        w[0] *= 0.5;
        w[self.n_steps] *= 0.5;
        w
    }
}

/// Boundary nodal values at every time step plus the final interior state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub grid: TimeGrid,
    pub boundary_index: Vec<usize>,
    /// Row-major `(n_steps + 1) × n_boundary`.
    pub values: Vec<f64>,
    pub final_snapshot: Vec<f64>,
    /// Full nodal field per step, kept only on request.
    #[serde(skip)]
    pub field: Option<Vec<Vec<f64>>>,
}

impl BoundaryTrace {
    pub fn n_boundary(&self) -> usize {
        self.boundary_index.len()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nb = self.n_boundary();
        &self.values[n * nb..(n + 1) * nb]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let nb = self.n_boundary();
        &mut self.values[n * nb..(n + 1) * nb]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Boundary values at `node_pos` across all steps.
    pub fn column(&self, node_pos: usize) -> Vec<f64> {
        (0..=self.grid.n_steps).map(|n| self.row(n)[node_pos]).collect()
    }

    pub fn check_shape(&self) -> Result<()> {
        let expected = (self.grid.n_steps + 1) * self.n_boundary();
        if self.values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// `time,<node>,<node>,...` with one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time")?;
        for n in &self.boundary_index {
            write!(w, ",n{n}")?;
        }
        writeln!(w)?;
        for k in 0..=self.grid.n_steps {
            write!(w, "{:e}", self.grid.time(k))?;
            for v in self.row(k) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Debug dump of the retained space-time field (row per step, column per node).
    pub fn write_field_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(field) = &self.field else {
            return Ok(());
        };
        for (k, u) in field.iter().enumerate() {
            write!(w, "{:e}", self.grid.time(k))?;
            for v in u {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_construction() {
        let g = TimeGrid::new(0.0, 2.0, 4e-3).unwrap();
        assert_eq!(g.n_steps, 500);
        assert!((g.t_end() - 2.0).abs() < 1e-12);
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
        let w = g.trapezoid_weights();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
