use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{boundary_quadrature, evaluate_field, Point, ProblemConfig, SourceModel, SpaceMesh};
use crate::forward::{BoundaryTrace, Propagator, SparseLoad, TimeGrid};
use crate::sparse::SolveOptions;

/// Source locations and amplitude samples on the inversion grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub locations: Vec<Point>,
    /// One series per source, `n_steps + 1` samples each.
    pub amplitudes: Vec<Vec<f64>>,
}

impl LmParams {
    pub fn n_sources(&self) -> usize {
        self.locations.len()
    }

    pub fn from_fns(locations: Vec<Point>, grid: &TimeGrid, amps: &[&dyn Fn(f64) -> f64]) -> Self {
        let times = grid.times();
        LmParams {
            locations,
            amplitudes: amps.iter().map(|f| times.iter().map(|&t| f(t)).collect()).collect(),
        }
    }

    pub fn check(&self, grid: &TimeGrid) -> Result<()> {
        if self.amplitudes.len() != self.locations.len() {
            return Err(Error::InvalidConfig(format!(
                "{} amplitude series for {} sources",
                self.amplitudes.len(),
                self.locations.len()
            )));
        }
        for a in &self.amplitudes {
            if a.len() != grid.n_steps + 1 {
                return Err(Error::DimensionMismatch {
                    expected: grid.n_steps + 1,
                    found: a.len(),
                });
            }
        }
        Ok(())
    }

    pub fn source_model(&self, grid: &TimeGrid) -> Result<SourceModel> {
        SourceModel::new(self.locations.clone(), grid.times(), self.amplitudes.clone())
    }

    /// Projects every location onto the box shrunk by `2h`.
    pub fn clamp(&mut self, mesh: &SpaceMesh) {
        for p in &mut self.locations {
            *p = mesh.clamp_interior(p, 2.0 * mesh.mesh_size);
        }
    }
}

/// Location Jacobian: one residual-shaped column per coordinate, ordered
/// source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationJacobian {
    pub columns: Vec<Vec<f64>>,
    /// Columns where the centered difference left the domain and a one-sided one was used.
    pub one_sided: Vec<bool>,
}

/// Amplitude block of the Jacobian, acting on `N` series of `n_steps + 1` samples.
pub trait LambdaJacobian {
    /// Weighted boundary trace of the sources `dλ` at the current locations.
    fn apply(&self, dl: &[Vec<f64>]) -> Result<Vec<f64>>;
    /// Exact transpose of [`LambdaJacobian::apply`].
    fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<Vec<f64>>>;
    /// Diagonal of `J_λ^T J_λ`, when cheaply available.
    fn gram_diagonal(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// Inversion grid, mesh, data and the prepared propagator.
pub struct LmProblem<'m> {
    config: ProblemConfig,
    prop: Propagator<'m>,
    grid: TimeGrid,
    /// `sqrt(w_n q_b)` per `(step, boundary node)`.
    scale: Vec<f64>,
    /// Boundary quadrature weights `q_b`.
    quad: Vec<f64>,
    data: Vec<f64>,
}

impl<'m> LmProblem<'m> {
    pub fn new(
        config: &ProblemConfig,
        mesh: &'m SpaceMesh,
        grid: &TimeGrid,
        data: &BoundaryTrace,
        opts: SolveOptions,
    ) -> Result<Self> {
        data.check_shape()?;
        if data.boundary_index != mesh.boundary_nodes {
            return Err(Error::IncompatibleGrid("data were recorded on a different mesh".into()));
        }
        if data.grid.n_steps != grid.n_steps
            || (data.grid.dt - grid.dt).abs() > 1e-12 * grid.dt
            || (data.grid.t0 - grid.t0).abs() > 1e-12
        {
            return Err(Error::IncompatibleGrid(format!(
                "data grid {:?} differs from inversion grid {:?}",
                data.grid, grid
            )));
        }
        Self::without_data(config, mesh, grid, opts).map(|mut p| {
            p.data = data.values.clone();
            p
        })
    }

    /// Problem with zero data, for Jacobian work.
    pub fn without_data(config: &ProblemConfig, mesh: &'m SpaceMesh, grid: &TimeGrid, opts: SolveOptions) -> Result<Self> {
        let prop = Propagator::new(config, mesh, grid.dt, opts)?;
        let q = boundary_quadrature(mesh).weights();
        let w = grid.trapezoid_weights();
        let scale = w
            .iter()
            .flat_map(|wn| q.iter().map(move |qb| (wn * qb).sqrt()))
            .collect::<Vec<_>>();
        let data = vec![0.0; scale.len()];
        Ok(LmProblem {
            config: config.clone(),
            prop,
            grid: *grid,
            scale,
            quad: q,
            data,
        })
    }

    pub fn mesh(&self) -> &'m SpaceMesh {
        self.prop.mesh()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn propagator(&self) -> &Propagator<'m> {
        &self.prop
    }

    pub fn residual_len(&self) -> usize {
        self.scale.len()
    }

    fn n_boundary(&self) -> usize {
        self.mesh().n_boundary()
    }

    /// `√(Σ_n w_n Σ_b q_b)`: the weighted norm of a unit-variance field, so
    /// i.i.d. noise of standard deviation `s` has expected weighted norm `≈ s·noise_scale()`.
    pub fn noise_scale(&self) -> f64 {
        self.scale.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Unweighted boundary trace of `params`.
    pub fn forward(&self, params: &LmParams) -> Result<BoundaryTrace> {
        params.check(&self.grid)?;
        let src = params.source_model(&self.grid)?;
        self.prop.simulate(&self.config, &src, &self.grid, false)
    }

    /// `√(w_n q_b)·(F(params) − data)`, so `|r|²` is the `L²([0,T]×∂Ω)` misfit.
    pub fn residual(&self, params: &LmParams) -> Result<Vec<f64>> {
        let f = self.forward(params)?;
        Ok(f.values
            .iter()
            .zip(&self.data)
            .zip(&self.scale)
            .map(|((u, d), s)| s * (u - d))
            .collect())
    }

    fn convolve(&self, impulse: &[f64], amps: &[f64], out: &mut [f64]) {
        let nb = self.n_boundary();
        for n in 1..=self.grid.n_steps {
            let row = &mut out[n * nb..(n + 1) * nb];
            for j in 1..=n {
                let a = amps[j];
                if a == 0.0 {
                    continue;
                }
                let h = &impulse[(n - j) * nb..(n - j + 1) * nb];
                for (o, v) in row.iter_mut().zip(h) {
                    *o += a * v;
                }
            }
        }
    }

    fn weight(&self, mut v: Vec<f64>) -> Vec<f64> {
        for (x, s) in v.iter_mut().zip(&self.scale) {
            *x *= s;
        }
        v
    }

    fn load_or_none(&self, x: &Point) -> Option<SparseLoad> {
        if self.mesh().contains(x) {
            self.prop.load_for(x).ok()
        } else {
            None
        }
    }

    /// Central differences of the residual in each coordinate with step `h_fd`.
    ///
    /// The load depends linearly on the barycentric weights, so the difference of
    /// residuals equals one forward solve with the differenced load.
    pub fn jacobian_x(&self, params: &LmParams, h_fd: f64) -> Result<LocationJacobian> {
        params.check(&self.grid)?;
        let dim = self.mesh().dim;
        let mut columns = Vec::with_capacity(dim * params.n_sources());
        let mut one_sided = Vec::with_capacity(columns.capacity());
        for (k, x) in params.locations.iter().enumerate() {
            for a in 0..dim {
                let (load, flag) = self.differenced_load(x, a, h_fd)?;
                let impulse = self.prop.impulse_response(&load, self.grid.n_steps)?;
                let mut col = vec![0.0; self.residual_len()];
                self.convolve(&impulse, &params.amplitudes[k], &mut col);
                columns.push(self.weight(col));
                one_sided.push(flag);
            }
        }
        Ok(LocationJacobian { columns, one_sided })
    }

    fn differenced_load(&self, x: &Point, axis: usize, h: f64) -> Result<(SparseLoad, bool)> {
        let mut p = *x;
        let mut m = *x;
        p[axis] += h;
        m[axis] -= h;
        let combine = |a: SparseLoad, b: SparseLoad, scale: f64| -> SparseLoad {
            let mut out: SparseLoad = a.into_iter().map(|(i, v)| (i, v * scale)).collect();
            out.extend(b.into_iter().map(|(i, v)| (i, -v * scale)));
            out
        };
        match (self.load_or_none(&p), self.load_or_none(&m)) {
            (Some(lp), Some(lm)) => Ok((combine(lp, lm, 0.5 / h), false)),
            (Some(lp), None) => Ok((combine(lp, self.prop.load_for(x)?, 1.0 / h), true)),
            (None, Some(lm)) => Ok((combine(self.prop.load_for(x)?, lm, 1.0 / h), true)),
            (None, None) => Err(Error::OutsideDomain(x.coords(self.mesh().dim).to_vec())),
        }
    }

    /// Amplitude Jacobian by forward solves and the transposed backward sweep.
    pub fn pde_lambda_jacobian<'p>(&'p self, locations: &[Point]) -> Result<PdeLambdaJacobian<'p, 'm>> {
        let loads = locations
            .iter()
            .map(|x| self.prop.load_for(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(PdeLambdaJacobian {
            problem: self,
            locations: locations.to_vec(),
            loads,
        })
    }

    /// Amplitude Jacobian as a discrete convolution with one impulse response per source.
    pub fn convolution_lambda_jacobian<'p>(&'p self, locations: &[Point]) -> Result<ConvolutionLambdaJacobian<'p, 'm>> {
        let impulses = locations
            .iter()
            .map(|x| {
                let load = self.prop.load_for(x)?;
                self.prop.impulse_response(&load, self.grid.n_steps)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvolutionLambdaJacobian {
            problem: self,
            impulses,
        })
    }

    fn check_residual(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.residual_len() {
            return Err(Error::DimensionMismatch {
                expected: self.residual_len(),
                found: r.len(),
            });
        }
        Ok(())
    }

    fn check_series(&self, dl: &[Vec<f64>], n: usize) -> Result<()> {
        if dl.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: dl.len(),
            });
        }
        for s in dl {
            if s.len() != self.grid.n_steps + 1 {
                return Err(Error::DimensionMismatch {
                    expected: self.grid.n_steps + 1,
                    found: s.len(),
                });
            }
        }
        Ok(())
    }
}

pub struct PdeLambdaJacobian<'p, 'm> {
    problem: &'p LmProblem<'m>,
    locations: Vec<Point>,
    loads: Vec<SparseLoad>,
}

impl LambdaJacobian for PdeLambdaJacobian<'_, '_> {
    fn apply(&self, dl: &[Vec<f64>]) -> Result<Vec<f64>> {
        let p = self.problem;
        p.check_series(dl, self.loads.len())?;
        let u0 = vec![0.0; p.mesh().n_nodes()];
        let trace = p.prop.run(u0, &p.grid, false, |n| {
            let mut load = SparseLoad::new();
            for (l, a) in self.loads.iter().zip(dl) {
                if a[n] != 0.0 {
                    load.extend(l.iter().map(|&(i, w)| (i, a[n] * w)));
                }
            }
            load
        })?;
        Ok(p.weight(trace.values))
    }

    /// Backward sweep `q_j = (M + dt K)^{-T} (B^T (s_j ∘ r_j) + M q_{j+1})`,
    /// gradient `dt·q_j(x_k)`.
    fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self.problem;
        p.check_residual(r)?;
        let mesh = p.mesh();
        let nb = mesh.n_boundary();
        let n_steps = p.grid.n_steps;
        let dt = p.prop.dt();
        let mass = &p.prop.operators().mass;
        let mut out = vec![vec![0.0; n_steps + 1]; self.locations.len()];
        let mut q = vec![0.0; mesh.n_nodes()];
        let mut rhs = vec![0.0; mesh.n_nodes()];
        for j in (1..=n_steps).rev() {
            mass.mul_into(&q, &mut rhs);
            for (b, &node) in mesh.boundary_nodes.iter().enumerate() {
                let idx = j * nb + b;
                rhs[node] += p.scale[idx] * r[idx];
            }
            q = p.prop.solve_transposed(&rhs)?;
            for (k, x) in self.locations.iter().enumerate() {
                out[k][j] = dt * evaluate_field(mesh, &q, x)?;
            }
        }
        Ok(out)
    }
}

pub struct ConvolutionLambdaJacobian<'p, 'm> {
    problem: &'p LmProblem<'m>,
    /// `n_steps × n_boundary` responses to a unit amplitude at one step.
    impulses: Vec<Vec<f64>>,
}

impl ConvolutionLambdaJacobian<'_, '_> {
    /// Unweighted trace of `amps` at source `k`.
    pub fn trace_of(&self, k: usize, amps: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.residual_len()];
        self.problem.convolve(&self.impulses[k], amps, &mut out);
        out
    }
}

impl LambdaJacobian for ConvolutionLambdaJacobian<'_, '_> {
    fn apply(&self, dl: &[Vec<f64>]) -> Result<Vec<f64>> {
        let p = self.problem;
        p.check_series(dl, self.impulses.len())?;
        let mut out = vec![0.0; p.residual_len()];
        for (h, a) in self.impulses.iter().zip(dl) {
            p.convolve(h, a, &mut out);
        }
        Ok(p.weight(out))
    }

    fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self.problem;
        p.check_residual(r)?;
        let nb = p.n_boundary();
        let n_steps = p.grid.n_steps;
        let sr: Vec<f64> = r.iter().zip(&p.scale).map(|(a, s)| a * s).collect();
        Ok(self
            .impulses
            .iter()
            .map(|h| {
                let mut g = vec![0.0; n_steps + 1];
                for (j, gj) in g.iter_mut().enumerate().skip(1) {
                    let mut acc = 0.0;
                    for n in j..=n_steps {
                        let hr = &h[(n - j) * nb..(n - j + 1) * nb];
                        let rr = &sr[n * nb..(n + 1) * nb];
                        acc += hr.iter().zip(rr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    *gj = acc;
                }
                g
            })
            .collect())
    }

    fn gram_diagonal(&self) -> Option<Vec<Vec<f64>>> {
        let p = self.problem;
        let nb = p.n_boundary();
        let n_steps = p.grid.n_steps;
        let w = p.grid.trapezoid_weights();
        let q = &p.quad;
        Some(
            self.impulses
                .iter()
                .map(|h| {
                    let energy: Vec<f64> = (0..n_steps)
                        .map(|m| {
                            h[m * nb..(m + 1) * nb]
                                .iter()
                                .zip(q)
                                .map(|(v, qb)| v * v * qb)
                                .sum()
                        })
                        .collect();
                    let mut d = vec![0.0; n_steps + 1];
                    for (j, dj) in d.iter_mut().enumerate().skip(1) {
                        *dj = (j..=n_steps).map(|n| w[n] * energy[n - j]).sum();
                    }
                    d
                })
                .collect(),
        )
    }
}

/// Weighted residual `√(w q)·(F(params) − data)`.
pub fn residual(
    params: &LmParams,
    data: &BoundaryTrace,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    LmProblem::new(config, mesh, grid, data, SolveOptions::default())?.residual(params)
}

/// Location Jacobian with the default step `h/4`.
pub fn jacobian_x(params: &LmParams, config: &ProblemConfig, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<LocationJacobian> {
    LmProblem::without_data(config, mesh, grid, SolveOptions::default())?.jacobian_x(params, 0.25 * mesh.mesh_size)
}

/// `J_λ dλ`: weighted trace of the sources `dλ` at `params.locations` from zero initial data.
pub fn apply_jacobian_lambda(
    params: &LmParams,
    dl: &[Vec<f64>],
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let p = LmProblem::without_data(config, mesh, grid, SolveOptions::default())?;
    p.pde_lambda_jacobian(&params.locations)?.apply(dl)
}

/// `J_λ^T r` by the discrete adjoint sweep.
pub fn apply_jacobian_lambda_adjoint(
    params: &LmParams,
    r: &[f64],
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    let p = LmProblem::without_data(config, mesh, grid, SolveOptions::default())?;
    p.pde_lambda_jacobian(&params.locations)?.apply_adjoint(r)
}
