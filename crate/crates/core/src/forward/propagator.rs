use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::fem::{assemble_operators, point_source_load, InitialCondition, Operators, ProblemConfig, SourceModel, SpaceMesh};
use crate::sparse::{LinearSolver, SolveOptions};

use super::{BoundaryTrace, TimeGrid};

/// Nonzero entries of a nodal load vector.
pub type SparseLoad = Vec<(usize, f64)>;

/// Prepared backward Euler stepper `(M + dt·K) u^{n+1} = M u^n + dt·f^{n+1}`.
///
/// The step matrix is factored once; the transposed system used by the
/// discrete adjoint is factored lazily.
pub struct Propagator<'m> {
    mesh: &'m SpaceMesh,
    ops: Operators,
    dt: f64,
    opts: SolveOptions,
    solver: LinearSolver,
    adjoint_solver: OnceLock<Result<LinearSolver>>,
}

impl<'m> Propagator<'m> {
    pub fn new(config: &ProblemConfig, mesh: &'m SpaceMesh, dt: f64, opts: SolveOptions) -> Result<Self> {
        config.validate()?;
        if config.dim != mesh.dim {
            return Err(Error::InvalidConfig(format!(
                "config dim {} does not match mesh dim {}",
                config.dim, mesh.dim
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::IncompatibleGrid(format!("dt must be positive, got {dt}")));
        }
        let ops = assemble_operators(mesh, &config.advection, config.reaction)?;
        let step = ops.mass.linear_combination(1.0, &ops.spatial, dt)?;
        let solver = LinearSolver::new(step, opts)?;
        Ok(Self {
            mesh,
            ops,
            dt,
            opts,
            solver,
            adjoint_solver: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &'m SpaceMesh {
        self.mesh
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solves `(M + dt·K) x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(rhs)
    }

    /// Solves `(M + dt·K)^T x = rhs`.
    pub fn solve_transposed(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let solver = self.adjoint_solver.get_or_init(|| {
            let t = self.solver.matrix().transpose();
            LinearSolver::new(t, self.opts)
        });
        match solver {
            Ok(s) => s.solve(rhs),
            Err(e) => Err(Error::Factorization(e.to_string())),
        }
    }

    /// One step from `u` with nodal load `load` active at the new time level.
    pub fn step(&self, u: &[f64], load: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; u.len()];
        self.ops.mass.mul_into(u, &mut rhs);
        for &(i, v) in load {
            rhs[i] += self.dt * v;
        }
        self.solve(&rhs)
    }

    pub fn load_for(&self, x: &crate::fem::Point) -> Result<SparseLoad> {
        Ok(point_source_load(self.mesh, x)?
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect())
    }

    pub fn initial_state(&self, config: &ProblemConfig) -> Result<Vec<f64>> {
        match &config.initial_condition {
            InitialCondition::Zero => Ok(vec![0.0; self.mesh.n_nodes()]),
            InitialCondition::Nodal(v) if v.len() == self.mesh.n_nodes() => Ok(v.clone()),
            InitialCondition::Nodal(v) => Err(Error::DimensionMismatch {
                expected: self.mesh.n_nodes(),
                found: v.len(),
            }),
        }
    }

    fn boundary_row(&self, u: &[f64], out: &mut Vec<f64>) {
        out.extend(self.mesh.boundary_nodes.iter().map(|&i| u[i]));
    }

    /// Runs `n_steps` from `u0`; `load_at(n)` gives the load at step `n ≥ 1`.
    pub fn run<F>(&self, u0: Vec<f64>, grid: &TimeGrid, keep_field: bool, mut load_at: F) -> Result<BoundaryTrace>
    where
        F: FnMut(usize) -> SparseLoad,
    {
        if u0.len() != self.mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.mesh.n_nodes(),
                found: u0.len(),
            });
        }
        if (grid.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::IncompatibleGrid(format!(
                "grid dt {} differs from propagator dt {}",
                grid.dt, self.dt
            )));
        }
        let nb = self.mesh.n_boundary();
        let mut values = Vec::with_capacity((grid.n_steps + 1) * nb);
        self.boundary_row(&u0, &mut values);
        let mut field = keep_field.then(|| vec![u0.clone()]);
        let mut u = u0;
        for n in 1..=grid.n_steps {
            u = self.step(&u, &load_at(n))?;
            self.boundary_row(&u, &mut values);
            if let Some(f) = field.as_mut() {
                f.push(u.clone());
            }
        }
        Ok(BoundaryTrace {
            grid: *grid,
            boundary_index: self.mesh.boundary_nodes.clone(),
            values,
            final_snapshot: u,
            field,
        })
    }

    /// Trace with the sources of `sources` switched on, amplitudes interpolated
    /// at the implicit time level.
    pub fn simulate(
        &self,
        config: &ProblemConfig,
        sources: &SourceModel,
        grid: &TimeGrid,
        keep_field: bool,
    ) -> Result<BoundaryTrace> {
        check_amplitude_grid(sources, grid)?;
        let loads = sources
            .locations
            .iter()
            .map(|x| self.load_for(x))
            .collect::<Result<Vec<_>>>()?;
        let u0 = self.initial_state(config)?;
        self.run(u0, grid, keep_field, |n| {
            let t = grid.time(n);
            let mut load = SparseLoad::new();
            for (k, l) in loads.iter().enumerate() {
                let a = sources.amplitude_at(k, t);
                if a != 0.0 {
                    load.extend(l.iter().map(|&(i, w)| (i, a * w)));
                }
            }
            load
        })
    }

    /// Boundary response `B S^m (M + dt·K)^{-1} dt·load`, `m = 0..n_steps-1`.
    ///
    /// With zero initial data the trace at step `n` of a source with amplitude
    /// samples `a_j` is `Σ_{j=1}^{n} h[n-j]·a_j`, so one solve sequence yields the
    /// whole amplitude-to-trace map for a fixed location.
    pub fn impulse_response(&self, load: &[(usize, f64)], n_steps: usize) -> Result<Vec<f64>> {
        let nb = self.mesh.n_boundary();
        let mut out = Vec::with_capacity(n_steps * nb);
        let zero = vec![0.0; self.mesh.n_nodes()];
        let mut u = self.step(&zero, load)?;
        self.boundary_row(&u, &mut out);
        for _ in 1..n_steps {
            u = self.step(&u, &[])?;
            self.boundary_row(&u, &mut out);
        }
        Ok(out)
    }
}

fn check_amplitude_grid(sources: &SourceModel, grid: &TimeGrid) -> Result<()> {
    if sources.n_sources() == 0 {
        return Ok(());
    }
    let g = &sources.amplitude_grid;
    let tol = 1e-9 * grid.t_end().abs().max(1.0);
    match (g.first(), g.last()) {
        (Some(&a), Some(&b)) if a <= grid.t0 + tol && b >= grid.t_end() - tol => Ok(()),
        _ => Err(Error::IncompatibleGrid(format!(
            "amplitude samples do not cover [{}, {}]",
            grid.t0,
            grid.t_end()
        ))),
    }
}

/// Backward Euler solution of the source problem; boundary values at every
/// step and the state at the final time.
pub fn simulate(
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    sources: &SourceModel,
    grid: &TimeGrid,
) -> Result<BoundaryTrace> {
    Propagator::new(config, mesh, grid.dt, SolveOptions::default())?.simulate(config, sources, grid, false)
}

/// As [`simulate`], retaining the full nodal field at every step.
pub fn simulate_full(
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    sources: &SourceModel,
    grid: &TimeGrid,
) -> Result<BoundaryTrace> {
    Propagator::new(config, mesh, grid.dt, SolveOptions::default())?.simulate(config, sources, grid, true)
}

/// Source-free continuation from `snapshot` over `grid_ext` (which starts at
/// the end of the observation window and spans `t_ext`).
pub fn extend_in_time(
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    snapshot: &[f64],
    t_ext: f64,
    grid_ext: &TimeGrid,
) -> Result<BoundaryTrace> {
    if snapshot.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_nodes(),
            found: snapshot.len(),
        });
    }
    let span = grid_ext.t_end() - grid_ext.t0;
    if (span - t_ext).abs() > 1e-9 * t_ext.max(1.0) {
        return Err(Error::IncompatibleGrid(format!(
            "extension grid spans {span}, expected {t_ext}"
        )));
    }
    let prop = Propagator::new(config, mesh, grid_ext.dt, SolveOptions::default())?;
    prop.run(snapshot.to_vec(), grid_ext, false, |_| SparseLoad::new())
}
