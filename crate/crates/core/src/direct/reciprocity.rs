use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_operators, InitialCondition, Point, ProblemConfig, SpaceMesh};
use crate::forward::BoundaryTrace;
use crate::sparse::CsrMatrix;

use super::probes::CaloricProbe;

/// Mesh data shared by every pairing of one trace with many probes.
pub(crate) struct Pairing<'m> {
    pub mesh: &'m SpaceMesh,
    pub mass: CsrMatrix,
    /// Position in the trace row of each boundary quadrature point.
    pub quad_pos: Vec<usize>,
    pub u0: Option<Vec<f64>>,
}

impl<'m> Pairing<'m> {
    pub fn new(config: &ProblemConfig, mesh: &'m SpaceMesh) -> Result<Self> {
        if config.dim != mesh.dim {
            return Err(Error::DimensionMismatch {
                expected: mesh.dim,
                found: config.dim,
            });
        }
        let ops = assemble_operators(mesh, &config.advection, config.reaction)?;
        let pos = mesh.boundary_position();
        let quad_pos = mesh
            .boundary_quad
            .iter()
            .map(|q| pos[q.node].expect("quadrature nodes are boundary nodes"))
            .collect();
        let u0 = match &config.initial_condition {
            InitialCondition::Zero => None,
            InitialCondition::Nodal(v) if v.len() == mesh.n_nodes() => Some(v.clone()),
            InitialCondition::Nodal(v) => {
                return Err(Error::DimensionMismatch {
                    expected: mesh.n_nodes(),
                    found: v.len(),
                })
            }
        };
        Ok(Pairing {
            mesh,
            mass: ops.mass,
            quad_pos,
            u0,
        })
    }

    pub fn check(&self, trace: &BoundaryTrace) -> Result<()> {
        trace.check_shape()?;
        if trace.boundary_index != self.mesh.boundary_nodes {
            return Err(Error::IncompatibleGrid("trace was recorded on a different mesh".into()));
        }
        if trace.final_snapshot.len() != self.mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.mesh.n_nodes(),
                found: trace.final_snapshot.len(),
            });
        }
        Ok(())
    }

    /// Quadrature-weighted boundary flux of `probe`, one entry per quadrature point.
    pub fn flux_weights(&self, probe: &CaloricProbe) -> Vec<Complex64> {
        self.mesh
            .boundary_quad
            .iter()
            .map(|q| q.weight * probe.flux(&self.mesh.node_coords[q.node], &q.normal))
            .collect()
    }

    pub fn nodal(&self, probe: &CaloricProbe) -> Vec<Complex64> {
        self.mesh.node_coords.iter().map(|x| probe.value(x)).collect()
    }

    /// `∫_Ω u v` through the mass matrix; also returns `∫ |u| |v|` as a scale.
    pub fn volume(&self, u: &[f64], v: &[Complex64]) -> (Complex64, f64) {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for i in 0..self.mass.n_rows() {
            let mut row = 0.0;
            let mut row_abs = 0.0;
            for (j, m) in self.mass.row(i) {
                row += m * u[j];
                row_abs += m * u[j].abs();
            }
            acc += v[i] * row;
            scale += v[i].norm() * row_abs;
        }
        (acc, scale)
    }

    /// Boundary flux integral at one time row.
    pub fn boundary_row(&self, row: &[f64], flux: &[Complex64]) -> Complex64 {
        self.quad_pos.iter().zip(flux).map(|(&p, f)| f * row[p]).sum()
    }
}

/// Reciprocity functional together with the sum of magnitudes of its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Gap {
    pub value: Complex64,
    pub scale: f64,
}

impl Gap {
    pub fn nonvanishing(self) -> Result<Complex64> {
        if !(self.value.norm() > 1e-12 * self.scale) {
            return Err(Error::VanishingAmplitude(self.value.norm()));
        }
        Ok(self.value)
    }
}

pub(crate) fn gap(pairing: &Pairing, trace: &BoundaryTrace, probe: &CaloricProbe) -> Result<Gap> {
    if !probe.is_steady() {
        return Err(Error::IncompatibleProbe(
            "reciprocity gap needs a steady (z = 0) probe".into(),
        ));
    }
    if probe.dim != pairing.mesh.dim {
        return Err(Error::IncompatibleProbe(format!(
            "probe is {}-dimensional, mesh is {}-dimensional",
            probe.dim, pairing.mesh.dim
        )));
    }
    pairing.check(trace)?;
    let flux = pairing.flux_weights(probe);
    let flux_abs: Vec<f64> = flux.iter().map(|f| f.norm()).collect();
    let mut value = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for (n, w) in trace.grid.trapezoid_weights().into_iter().enumerate() {
        let row = trace.row(n);
        value += w * pairing.boundary_row(row, &flux);
        scale += w * pairing
            .quad_pos
            .iter()
            .zip(&flux_abs)
            .map(|(&p, f)| f * row[p].abs())
            .sum::<f64>();
    }
    let v = pairing.nodal(probe);
    let (vol, vol_scale) = pairing.volume(&trace.final_snapshot, &v);
    value += vol;
    scale += vol_scale;
    if let Some(u0) = &pairing.u0 {
        let (init, init_scale) = pairing.volume(u0, &v);
        value -= init;
        scale += init_scale;
    }
    Ok(Gap { value, scale })
}

/// `∫_0^T ∮ u (∂_ν v + (A·ν) v) + ∫_Ω u(T) v − ∫_Ω u_0 v`, which equals
/// `Σ_j (∫_0^T λ_j) v(x_j)` for a steady probe `v`.
pub fn reciprocity_gap(
    trace: &BoundaryTrace,
    probe: &CaloricProbe,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
) -> Result<Complex64> {
    let pairing = Pairing::new(config, mesh)?;
    Ok(gap(&pairing, trace, probe)?.value)
}

/// Location estimate: the projection onto the domain and the unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationEstimate {
    pub point: Point,
    pub raw: Point,
}

impl LocationEstimate {
    fn from_raw(raw: Point, mesh: &SpaceMesh) -> Self {
        LocationEstimate {
            point: mesh.clamp_interior(&raw, 0.0),
            raw,
        }
    }
}

/// Inverts `R(v_{±e_i}) = m·e^{±κ x_i}` axis by axis; `gaps[i] = (R(v_{+e_i}), R(v_{-e_i}))`.
pub fn location_from_exp_gaps(gaps: &[(f64, f64)], kappa: f64) -> Result<Point> {
    if !(kappa > 0.0) {
        return Err(Error::IncompatibleProbe(format!(
            "exponential ratio needs a real positive rate, got {kappa}"
        )));
    }
    let mut x = [0.0; 2];
    for (xi, &(plus, minus)) in x.iter_mut().zip(gaps) {
        let rho = plus / minus;
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::VanishingAmplitude(plus.abs().min(minus.abs())));
        }
        *xi = rho.ln() / (2.0 * kappa);
    }
    Ok(Point(x))
}

/// `x̂ = R(x e^{-Ax/2}) / R(e^{-Ax/2})`.
pub fn location_from_affine_gaps(r0: f64, r1: f64) -> Result<f64> {
    if r0 == 0.0 || !r0.is_finite() {
        return Err(Error::VanishingAmplitude(r0.abs()));
    }
    Ok(r1 / r0)
}

/// Single-source location from the exponential probes `e^{-A·x/2} e^{±κ x_i}`.
pub fn recover_location_single(
    trace: &BoundaryTrace,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
) -> Result<LocationEstimate> {
    let m = config.effective_reaction();
    if !(m > 0.0) {
        return Err(Error::IncompatibleProbe(format!(
            "mu + |A|^2/4 = {m} <= 0 gives no real exponential probe; use the harmonic moments"
        )));
    }
    let pairing = Pairing::new(config, mesh)?;
    let origin = Point::default();
    let mut gaps = Vec::with_capacity(config.dim);
    for axis in 0..config.dim {
        let mut e = [0.0; 2];
        e[axis] = 1.0;
        let plus = CaloricProbe::exp(config, &e, origin)?;
        e[axis] = -1.0;
        let minus = CaloricProbe::exp(config, &e, origin)?;
        let rp = gap(&pairing, trace, &plus)?.nonvanishing()?;
        let rm = gap(&pairing, trace, &minus)?.nonvanishing()?;
        gaps.push((rp.re, rm.re));
    }
    let raw = location_from_exp_gaps(&gaps, m.sqrt())?;
    Ok(LocationEstimate::from_raw(raw, mesh))
}

/// Single-source location in 1D for `μ = -A²/4` from the affine probe pair.
pub fn recover_location_1d(
    trace: &BoundaryTrace,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
) -> Result<LocationEstimate> {
    if config.dim != 1 {
        return Err(Error::IncompatibleProbe("affine location needs d = 1".into()));
    }
    let pairing = Pairing::new(config, mesh)?;
    let origin = Point::default();
    let r0 = gap(&pairing, trace, &CaloricProbe::affine_1d(config, 0, origin)?)?.nonvanishing()?;
    let r1 = gap(&pairing, trace, &CaloricProbe::affine_1d(config, 1, origin)?)?.value;
    let x = location_from_affine_gaps(r0.re, r1.re)?;
    Ok(LocationEstimate::from_raw(Point::new1(x), mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_interval_mesh, build_square_mesh, SourceModel};
    use crate::forward::{simulate, TimeGrid};

    fn config(dim: usize, reaction: f64) -> ProblemConfig {
        ProblemConfig {
            dim,
            domain_length: 1.0,
            advection: vec![0.0; dim],
            reaction,
            horizon: 2.0,
            support_end: 1.0,
            obs_start: 1.5,
            initial_condition: InitialCondition::Zero,
        }
    }

    fn run(cfg: &ProblemConfig, mesh: &SpaceMesh, x: Point, amp: &dyn Fn(f64) -> f64, dt: f64) -> BoundaryTrace {
        let grid = TimeGrid::new(0.0, cfg.horizon, dt).unwrap();
        let src = SourceModel::from_fns(vec![x], &grid.times(), &[amp]).unwrap();
        simulate(cfg, mesh, &src, &grid).unwrap()
    }

    #[test]
    fn zero_trace_gives_zero() {
        let cfg = config(2, 1.0);
        let mesh = build_square_mesh(1.0, 0.25).unwrap();
        let trace = run(&cfg, &mesh, Point::new2(0.5, 0.5), &|_| 0.0, 0.1);
        let p = CaloricProbe::exp(&cfg, &[1.0, 1.0], Point::default()).unwrap();
        assert_eq!(reciprocity_gap(&trace, &p, &cfg, &mesh).unwrap(), Complex64::new(0.0, 0.0));
        assert!(matches!(
            recover_location_single(&trace, &cfg, &mesh),
            Err(Error::VanishingAmplitude(_))
        ));
    }

    #[test]
    fn linear_in_the_probe() {
        let cfg = config(2, 1.0);
        let mesh = build_square_mesh(1.0, 0.125).unwrap();
        let trace = run(&cfg, &mesh, Point::new2(0.3, 0.6), &|t| (-t).exp(), 0.05);
        let pairing = Pairing::new(&cfg, &mesh).unwrap();
        let a = CaloricProbe::exp(&cfg, &[1.0, 0.0], Point::default()).unwrap();
        let b = CaloricProbe::exp(&cfg, &[0.0, -1.0], Point::default()).unwrap();
        let ga = gap(&pairing, &trace, &a).unwrap().value;
        let gb = gap(&pairing, &trace, &b).unwrap().value;
        // the functional of v_a + v_b, assembled from the summed flux and nodal values
        let fa = pairing.flux_weights(&a);
        let fb = pairing.flux_weights(&b);
        let f: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x + y).collect();
        let v: Vec<_> = pairing
            .nodal(&a)
            .iter()
            .zip(pairing.nodal(&b))
            .map(|(x, y)| x + y)
            .collect();
        let mut sum = pairing.volume(&trace.final_snapshot, &v).0;
        for (n, w) in trace.grid.trapezoid_weights().into_iter().enumerate() {
            sum += w * pairing.boundary_row(trace.row(n), &f);
        }
        assert!((sum - ga - gb).norm() < 1e-13 * (ga.norm() + gb.norm()));
    }

    #[test]
    fn exponential_probe_on_interval() {
        let cfg = config(1, 1.0);
        let mesh = build_interval_mesh(1.0, 2e-3).unwrap();
        let trace = run(&cfg, &mesh, Point::new1(0.5), &|t| 0.5 * (-5.0 * t).exp(), 2e-3);
        let p = CaloricProbe::exp(&cfg, &[1.0], Point::default()).unwrap();
        let r = reciprocity_gap(&trace, &p, &cfg, &mesh).unwrap();
        let exact = 0.5 * (1.0 - (-10.0f64).exp()) / 5.0 * 0.5f64.exp();
        assert!((r.re - exact).abs() < 1e-2 * exact, "{} vs {exact}", r.re);
        assert_eq!(r.im, 0.0);
    }

    #[test]
    fn single_source_in_the_square() {
        let cfg = config(2, 1.0);
        let mesh = build_square_mesh(1.0, 0.05).unwrap();
        let x0 = Point::new2(0.35, 0.6);
        let trace = run(&cfg, &mesh, x0, &|t| if t <= 1.0 { 1.0 } else { 0.0 }, 0.02);
        let est = recover_location_single(&trace, &cfg, &mesh).unwrap();
        for a in 0..2 {
            assert!((est.point[a] - x0[a]).abs() < 2.0 * mesh.mesh_size, "{est:?}");
        }
    }

    #[test]
    fn affine_location_from_fem_data() {
        let cfg = config(1, 0.0);
        let mesh = build_interval_mesh(1.0, 1e-2).unwrap();
        let trace = run(&cfg, &mesh, Point::new1(0.37), &|t| if t <= 1.0 { 1.0 } else { 0.0 }, 1e-2);
        let est = recover_location_1d(&trace, &cfg, &mesh).unwrap();
        assert!((est.point[0] - 0.37).abs() < 2.0 * mesh.mesh_size, "{est:?}");
        let zero = run(&cfg, &mesh, Point::new1(0.37), &|_| 0.0, 1e-2);
        assert!(matches!(
            recover_location_1d(&zero, &cfg, &mesh),
            Err(Error::VanishingAmplitude(_))
        ));
    }

    #[test]
    fn synthetic_kernels_are_exact() {
        let (x0, kappa) = ([0.3, 0.7], 1.3f64);
        let gaps: Vec<_> = x0.iter().map(|x| ((kappa * x).exp(), (-kappa * x).exp())).collect();
        let p = location_from_exp_gaps(&gaps, kappa).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] - 0.7).abs() < 1e-12);
        assert_eq!(location_from_affine_gaps(1.0, 0.5).unwrap(), 0.5);
        assert!(location_from_affine_gaps(0.0, 0.5).is_err());
        assert!(location_from_exp_gaps(&[(1.0, -1.0)], 1.0).is_err());
    }

    #[test]
    fn exponential_inversion_is_translation_equivariant() {
        // shifting the source and the probe origin together leaves the gap ratios
        // unchanged, so the estimate moves with the shift
        let kappa = 0.9;
        let m = 0.4;
        let x0 = [0.25, 0.55];
        let shift = [1.5, -0.75];
        let gaps = |x: [f64; 2]| -> Vec<(f64, f64)> {
            x.iter().map(|c| (m * (kappa * c).exp(), m * (-kappa * c).exp())).collect()
        };
        let a = location_from_exp_gaps(&gaps(x0), kappa).unwrap();
        let b = location_from_exp_gaps(&gaps([x0[0] + shift[0], x0[1] + shift[1]]), kappa).unwrap();
        for i in 0..2 {
            assert!((b[i] - a[i] - shift[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_time_dependent_probe() {
        let cfg = config(1, 1.0);
        let mesh = build_interval_mesh(1.0, 0.1).unwrap();
        let trace = run(&cfg, &mesh, Point::new1(0.5), &|_| 1.0, 0.1);
        let p = CaloricProbe::laplace(&cfg, Complex64::new(1.0, 1.0), &[1.0], Point::default()).unwrap();
        assert!(matches!(
            reciprocity_gap(&trace, &p, &cfg, &mesh),
            Err(Error::IncompatibleProbe(_))
        ));
    }
}
