use crate::error::{Error, Result};

use super::Point;

/// Boundary edge of a square mesh with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub element: usize,
    pub normal: [f64; 2],
    pub length: f64,
}

/// Trapezoid quadrature point on the boundary. Corner nodes of the square
/// appear once per adjacent edge, each with that edge's normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub node: usize,
    pub weight: f64,
    pub normal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SpaceMesh {
    pub dim: usize,
    pub domain_length: f64,
    pub cells_per_axis: usize,
    pub mesh_size: f64,
    pub node_coords: Vec<Point>,
    /// Node indices per element: 2 for segments, 3 (counter-clockwise) for triangles.
    pub elements: Vec<Vec<usize>>,
    /// Sorted ascending.
    pub boundary_nodes: Vec<usize>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub boundary_quad: Vec<QuadPoint>,
}

fn cell_count(length: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(h < length) {
        return Err(Error::InvalidMesh(format!(
            "mesh size {h} must lie in (0, {length})"
        )));
    }
    let ratio = length / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-8 * ratio.max(1.0) {
        return Err(Error::InvalidMesh(format!(
            "length {length} is not a multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

pub fn build_interval_mesh(length: f64, h: f64) -> Result<SpaceMesh> {
    let n = cell_count(length, h)?;
    let h = length / n as f64;
    let node_coords = (0..=n).map(|i| Point::new1(i as f64 * h)).collect();
    let elements = (0..n).map(|e| vec![e, e + 1]).collect();
    let boundary_quad = vec![
        QuadPoint {
            node: 0,
            weight: 1.0,
            normal: [-1.0, 0.0],
        },
        QuadPoint {
            node: n,
            weight: 1.0,
            normal: [1.0, 0.0],
        },
    ];
    Ok(SpaceMesh {
        dim: 1,
        domain_length: length,
        cells_per_axis: n,
        mesh_size: h,
        node_coords,
        elements,
        boundary_nodes: vec![0, n],
        boundary_edges: Vec::new(),
        boundary_quad,
    })
}

/// Uniform triangulation of `(0, L)^2`; every cell is cut along its
/// lower-left to upper-right diagonal.
pub fn build_square_mesh(length: f64, h: f64) -> Result<SpaceMesh> {
    let n = cell_count(length, h)?;
    let h = length / n as f64;
    let stride = n + 1;
    let node = |i: usize, j: usize| j * stride + i;
    let mut node_coords = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            node_coords.push(Point::new2(i as f64 * h, j as f64 * h));
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            elements.push(vec![a, b, c]);
            elements.push(vec![a, c, d]);
        }
    }
    let cell = |i: usize, j: usize| j * n + i;
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        // bottom edge lies in the lower triangle, top edge in the upper one
        boundary_edges.push(BoundaryEdge {
            nodes: [node(i, 0), node(i + 1, 0)],
            element: 2 * cell(i, 0),
            normal: [0.0, -1.0],
            length: h,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [node(i + 1, n), node(i, n)],
            element: 2 * cell(i, n - 1) + 1,
            normal: [0.0, 1.0],
            length: h,
        });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge {
            nodes: [node(n, j), node(n, j + 1)],
            element: 2 * cell(n - 1, j),
            normal: [1.0, 0.0],
            length: h,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [node(0, j + 1), node(0, j)],
            element: 2 * cell(0, j) + 1,
            normal: [-1.0, 0.0],
            length: h,
        });
    }
    let mut boundary_nodes: Vec<usize> = boundary_edges.iter().flat_map(|e| e.nodes).collect();
    boundary_nodes.sort_unstable();
    boundary_nodes.dedup();
    let boundary_quad = boundary_edges
        .iter()
        .flat_map(|e| {
            e.nodes.map(|node| QuadPoint {
                node,
                weight: 0.5 * e.length,
                normal: e.normal,
            })
        })
        .collect();
    Ok(SpaceMesh {
        dim: 2,
        domain_length: length,
        cells_per_axis: n,
        mesh_size: h,
        node_coords,
        elements,
        boundary_nodes,
        boundary_edges,
        boundary_quad,
    })
}

impl SpaceMesh {
    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_nodes.len()
    }

    pub fn contains(&self, p: &Point) -> bool {
        let tol = 1e-12 * self.domain_length;
        (0..self.dim).all(|a| p[a] >= -tol && p[a] <= self.domain_length + tol)
    }

    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        (0..self.dim)
            .map(|a| p[a].min(self.domain_length - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Projects `p` onto the box shrunk by `margin` on every side.
    pub fn clamp_interior(&self, p: &Point, margin: f64) -> Point {
        let mut q = *p;
        for a in 0..self.dim {
            q[a] = q[a].clamp(margin, self.domain_length - margin);
        }
        q
    }

    /// Cell index along one axis. A coordinate on a grid line belongs to the
    /// lower-indexed cell.
    fn axis_cell(&self, x: f64) -> usize {
        let s = x / self.mesh_size;
        let k = s.ceil() as isize - 1;
        k.clamp(0, self.cells_per_axis as isize - 1) as usize
    }

    /// Containing element (lowest index on ties) and the barycentric weight
    /// of each of its vertices.
    pub fn locate(&self, p: &Point) -> Result<(usize, Vec<(usize, f64)>)> {
        if !self.contains(p) {
            return Err(Error::OutsideDomain(p.coords(self.dim).to_vec()));
        }
        let h = self.mesh_size;
        match self.dim {
            1 => {
                let e = self.axis_cell(p[0]);
                let s = ((p[0] - e as f64 * h) / h).clamp(0.0, 1.0);
                Ok((e, vec![(e, 1.0 - s), (e + 1, s)]))
            }
            _ => {
                let n = self.cells_per_axis;
                let (i, j) = (self.axis_cell(p[0]), self.axis_cell(p[1]));
                let s = ((p[0] - i as f64 * h) / h).clamp(0.0, 1.0);
                let t = ((p[1] - j as f64 * h) / h).clamp(0.0, 1.0);
                let cell = j * n + i;
                let el = if s >= t { 2 * cell } else { 2 * cell + 1 };
                let v = &self.elements[el];
                let w = if s >= t {
                    [1.0 - s, s - t, t]
                } else {
                    [1.0 - t, s, t - s]
                };
                Ok((el, v.iter().copied().zip(w).collect()))
            }
        }
    }

    /// Map from node index to position in `boundary_nodes`.
    pub fn boundary_position(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.n_nodes()];
        for (k, &n) in self.boundary_nodes.iter().enumerate() {
            pos[n] = Some(k);
        }
        pos
    }

    /// Index of the node at `p`, if `p` coincides with one.
    pub fn node_at(&self, p: &Point) -> Option<usize> {
        let h = self.mesh_size;
        let stride = self.cells_per_axis + 1;
        let mut idx = 0;
        let mut mult = 1;
        for a in 0..self.dim {
            let s = p[a] / h;
            let k = s.round();
            if (s - k).abs() > 1e-8 || k < 0.0 || k as usize > self.cells_per_axis {
                return None;
            }
            idx += k as usize * mult;
            mult *= stride;
        }
        Some(idx)
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        let v = &self.elements[e];
        match self.dim {
            1 => (self.node_coords[v[1]][0] - self.node_coords[v[0]][0]).abs(),
            _ => {
                let (a, b, c) = (self.node_coords[v[0]], self.node_coords[v[1]], self.node_coords[v[2]]);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
            }
        }
    }
}
