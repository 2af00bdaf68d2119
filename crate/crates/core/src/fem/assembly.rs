use crate::error::{Error, Result};
use crate::sparse::{csr_from_triplets, CsrMatrix};

use super::{Point, SpaceMesh};

/// Galerkin matrices of `-Δu + A·∇u + μu` with natural boundary conditions.
#[derive(Debug, Clone)]
pub struct Operators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// Entry `(i, j)` is `∫ (A·∇φ_j) φ_i`.
    pub advection: CsrMatrix,
    /// `stiffness + advection + μ·mass`.
    pub spatial: CsrMatrix,
}

fn element_gradients(mesh: &SpaceMesh, e: usize) -> Vec<[f64; 2]> {
    let v = &mesh.elements[e];
    match mesh.dim {
        1 => {
            let len = mesh.node_coords[v[1]][0] - mesh.node_coords[v[0]][0];
            vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]]
        }
        _ => {
            let (p0, p1, p2) = (mesh.node_coords[v[0]], mesh.node_coords[v[1]], mesh.node_coords[v[2]]);
            let area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            vec![
                [(p1[1] - p2[1]) / area2, (p2[0] - p1[0]) / area2],
                [(p2[1] - p0[1]) / area2, (p0[0] - p2[0]) / area2],
                [(p0[1] - p1[1]) / area2, (p1[0] - p0[0]) / area2],
            ]
        }
    }
}

pub fn assemble_operators(mesh: &SpaceMesh, advection: &[f64], reaction: f64) -> Result<Operators> {
    if advection.len() != mesh.dim {
        return Err(Error::DimensionMismatch {
            expected: mesh.dim,
            found: advection.len(),
        });
    }
    let n = mesh.n_nodes();
    let a = [advection[0], if mesh.dim > 1 { advection[1] } else { 0.0 }];
    let mut mass_t = Vec::new();
    let mut stiff_t = Vec::new();
    let mut adv_t = Vec::new();
    for (e, verts) in mesh.elements.iter().enumerate() {
        let meas = mesh.element_measure(e);
        let grads = element_gradients(mesh, e);
        let nv = verts.len();
        // ∫φ_iφ_j = meas·(1+δ_ij)/((nv)(nv+1)) for P1 simplices
        let denom = (nv * (nv + 1)) as f64;
        for (li, &gi) in verts.iter().enumerate() {
            for (lj, &gj) in verts.iter().enumerate() {
                let m = meas * if li == lj { 2.0 } else { 1.0 } / denom;
                mass_t.push((gi, gj, m));
                let k = meas * (grads[li][0] * grads[lj][0] + grads[li][1] * grads[lj][1]);
                stiff_t.push((gi, gj, k));
                let c = meas / nv as f64 * (a[0] * grads[lj][0] + a[1] * grads[lj][1]);
                if c != 0.0 {
                    adv_t.push((gi, gj, c));
                }
            }
        }
    }
    let mass = csr_from_triplets(&mass_t, n, n)?;
    let stiffness = csr_from_triplets(&stiff_t, n, n)?;
    let advection = csr_from_triplets(&adv_t, n, n)?;
    let spatial_t: Vec<_> = stiff_t
        .iter()
        .chain(adv_t.iter())
        .copied()
        .chain(mass_t.iter().map(|&(i, j, v)| (i, j, reaction * v)))
        .collect();
    let spatial = csr_from_triplets(&spatial_t, n, n)?;
    Ok(Operators {
        mass,
        stiffness,
        advection,
        spatial,
    })
}

/// Nodal vector `φ_i(x0)`: the action of `δ_{x0}` on each basis function.
pub fn point_source_load(mesh: &SpaceMesh, x0: &Point) -> Result<Vec<f64>> {
    let (_, weights) = mesh.locate(x0)?;
    let mut b = vec![0.0; mesh.n_nodes()];
    for (node, w) in weights {
        b[node] += w;
    }
    Ok(b)
}

pub fn evaluate_field(mesh: &SpaceMesh, coeffs: &[f64], x: &Point) -> Result<f64> {
    if coeffs.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_nodes(),
            found: coeffs.len(),
        });
    }
    let (_, weights) = mesh.locate(x)?;
    Ok(weights.iter().map(|&(n, w)| w * coeffs[n]).sum())
}

/// Trapezoid quadrature on `∂Ω`, indexed by position in `boundary_index`.
#[derive(Debug, Clone)]
pub struct BoundaryQuadrature {
    pub boundary_index: Vec<usize>,
    /// Diagonal (lumped) boundary mass.
    pub boundary_mass: CsrMatrix,
}

impl BoundaryQuadrature {
    pub fn weights(&self) -> Vec<f64> {
        self.boundary_mass.diagonal()
    }

    /// `∫_{∂Ω} v² dσ` for boundary values `v` ordered like `boundary_index`.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        self.boundary_mass.bilinear(v, v)
    }
}

pub fn boundary_quadrature(mesh: &SpaceMesh) -> BoundaryQuadrature {
    let pos = mesh.boundary_position();
    let mut w = vec![0.0; mesh.n_boundary()];
    for q in &mesh.boundary_quad {
        w[pos[q.node].expect("quadrature nodes are boundary nodes")] += q.weight;
    }
    BoundaryQuadrature {
        boundary_index: mesh.boundary_nodes.clone(),
        boundary_mass: CsrMatrix::from_diagonal(&w),
    }
}
