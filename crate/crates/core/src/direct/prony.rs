use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Point, ProblemConfig, SpaceMesh};
use crate::forward::BoundaryTrace;

use super::probes::CaloricProbe;
use super::reciprocity::{gap, Pairing};

/// Power sums `G_k = Σ_j c_j ζ_j^k`, `ζ_j = (x_j − a)_1 + i (x_j − a)_2`,
/// measured with the probes `e^{-A·(x−a)/2} ((x − a)_1 + i (x − a)_2)^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub values: Vec<Complex64>,
    /// Origin `a` of the monomials.
    pub anchor: Point,
    pub advection: [f64; 2],
}

/// A recovered node with its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronyNode {
    pub node: Complex64,
    pub weight: Complex64,
}

impl PronyNode {
    pub fn location(&self, moments: &MomentSequence) -> Point {
        Point::new2(self.node.re + moments.anchor[0], self.node.im + moments.anchor[1])
    }

    /// `∫λ_j` from `c_j = (∫λ_j) e^{-A·(x_j − a)/2}`.
    pub fn amplitude_integral(&self, moments: &MomentSequence) -> Complex64 {
        let a = moments.advection;
        self.weight * (0.5 * (a[0] * self.node.re + a[1] * self.node.im)).exp()
    }
}

/// Moments `G_0..G_{K−1}` of the boundary data, for `μ = −|A|²/4` in 2D.
pub fn harmonic_moments(
    trace: &BoundaryTrace,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    k: usize,
) -> Result<MomentSequence> {
    harmonic_moments_about(trace, config, mesh, k, Point::default())
}

/// As [`harmonic_moments`] with monomials centered at `anchor`.
pub fn harmonic_moments_about(
    trace: &BoundaryTrace,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    k: usize,
    anchor: Point,
) -> Result<MomentSequence> {
    let pairing = Pairing::new(config, mesh)?;
    let values = (0..k)
        .map(|deg| {
            let probe = CaloricProbe::poly(config, deg as u32, anchor)?;
            Ok(gap(&pairing, trace, &probe)?.value)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut advection = [0.0; 2];
    for (d, s) in advection.iter_mut().zip(&config.advection) {
        *d = *s;
    }
    Ok(MomentSequence {
        values,
        anchor,
        advection,
    })
}

/// Exact power sums of the given nodes and weights.
pub fn synthesize_moments(nodes: &[Complex64], weights: &[Complex64], k: usize) -> Vec<Complex64> {
    (0..k)
        .map(|p| nodes.iter().zip(weights).map(|(z, c)| c * z.powu(p as u32)).sum())
        .collect()
}

/// Solves `Σ_j c_j ζ_j^k = G_k` for `n` nodes through the Hankel pencil.
pub fn prony_recover(moments: &MomentSequence, n: usize) -> Result<Vec<PronyNode>> {
    let g = &moments.values;
    if n == 0 || g.len() < 2 * n {
        return Err(Error::InvalidConfig(format!(
            "{} moments cannot determine {n} nodes",
            g.len()
        )));
    }
    let h0 = DMatrix::from_fn(n, n, |i, j| g[i + j]);
    let h1 = DMatrix::from_fn(n, n, |i, j| g[i + j + 1]);
    let sv = h0.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return Err(Error::RankDeficient(if smax > 0.0 { smin / smax } else { 0.0 }));
    }
    let pencil = h0
        .lu()
        .solve(&h1)
        .ok_or_else(|| Error::Factorization("Hankel matrix is singular".into()))?;
    let mut nodes: Vec<Complex64> = match n {
        1 => vec![pencil[(0, 0)]],
        _ => pencil
            .eigenvalues()
            .ok_or_else(|| Error::Factorization("pencil eigenvalues did not converge".into()))?
            .iter()
            .copied()
            .collect(),
    };
    // real parts equal up to rounding count as ties
    let key = |z: &Complex64| (z.re * 1e9).round();
    nodes.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.im.total_cmp(&b.im)));
    let vander = DMatrix::from_fn(g.len(), n, |k, j| nodes[j].powu(k as u32));
    let rhs = DVector::from_column_slice(g);
    let weights = vander
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Factorization(e.to_string()))?;
    Ok(nodes
        .into_iter()
        .zip(weights.iter())
        .map(|(node, &weight)| PronyNode { node, weight })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_square_mesh, InitialCondition, SourceModel};
    use crate::forward::{simulate, TimeGrid};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn seq(values: Vec<Complex64>) -> MomentSequence {
        MomentSequence {
            values,
            anchor: Point::default(),
            advection: [0.0; 2],
        }
    }

    #[test]
    fn single_node_closed_form() {
        let r = prony_recover(&seq(vec![c(2.0, 0.0), c(1.0, 1.0)]), 1).unwrap();
        assert!((r[0].node - c(0.5, 0.5)).norm() < 1e-15);
        assert!((r[0].weight - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn moment_oracle_by_direct_summation() {
        let z = [c(0.25, 0.25), c(0.75, 0.75)];
        let g = synthesize_moments(&z, &[c(1.0, 0.0), c(1.0, 0.0)], 3);
        assert!((g[0] - c(2.0, 0.0)).norm() < 1e-15);
        assert!((g[1] - c(1.0, 1.0)).norm() < 1e-15);
        // (1/4 + i/4)^2 = i/8, (3/4 + 3i/4)^2 = 9i/8
        assert!((g[2] - c(0.0, 1.25)).norm() < 1e-15);
        let single = synthesize_moments(&[c(0.3, -0.2)], &[c(-1.7, 0.0)], 2);
        assert!((single[1] / single[0] - c(0.3, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn two_nodes_round_trip() {
        let z = [c(0.25, 0.25), c(0.75, 0.75)];
        let w = [c(0.1, 0.0), c(0.2, 0.0)];
        let r = prony_recover(&seq(synthesize_moments(&z, &w, 4)), 2).unwrap();
        for j in 0..2 {
            assert!((r[j].node - z[j]).norm() < 1e-10, "{r:?}");
            assert!((r[j].weight - w[j]).norm() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn separated_node_sets_round_trip() {
        let sets = [
            vec![c(0.1, 0.9), c(0.2, 0.9)],
            vec![c(0.5, 0.1), c(0.5, 0.2), c(0.9, 0.9)],
            vec![c(0.15, 0.3), c(0.8, 0.35), c(0.45, 0.75), c(0.6, 0.6)],
        ];
        for z in sets {
            let w: Vec<_> = (0..z.len()).map(|j| c(0.5 + 0.25 * j as f64, 0.0)).collect();
            let r = prony_recover(&seq(synthesize_moments(&z, &w, 2 * z.len())), z.len()).unwrap();
            for (zz, ww) in z.iter().zip(&w) {
                let got = r
                    .iter()
                    .min_by(|a, b| (a.node - zz).norm().total_cmp(&(b.node - zz).norm()))
                    .unwrap();
                assert!((got.node - zz).norm() < 1e-10, "{got:?} vs {zz}");
                assert!((got.weight - ww).norm() < 1e-9, "{got:?} vs {ww}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted() {
        let z = [c(0.6, 0.2), c(0.6, 0.1), c(0.2, 0.5)];
        let w = [c(1.0, 0.0); 3];
        let r = prony_recover(&seq(synthesize_moments(&z, &w, 6)), 3).unwrap();
        let got: Vec<_> = r.iter().map(|p| p.node).collect();
        for (g, e) in got.iter().zip([z[2], z[1], z[0]]) {
            assert!((g - e).norm() < 1e-9);
        }
    }

    #[test]
    fn duplicated_node_is_rank_deficient() {
        let z = [c(0.4, 0.4), c(0.4, 0.4)];
        let g = synthesize_moments(&z, &[c(1.0, 0.0), c(1.0, 0.0)], 4);
        assert!(matches!(prony_recover(&seq(g), 2), Err(Error::RankDeficient(_))));
        assert!(prony_recover(&seq(vec![c(1.0, 0.0)]), 1).is_err());
    }

    #[test]
    fn moments_of_fem_data() {
        let cfg = ProblemConfig {
            dim: 2,
            domain_length: 1.0,
            advection: vec![0.0, 0.0],
            reaction: 0.0,
            horizon: 2.0,
            support_end: 1.0,
            obs_start: 1.5,
            initial_condition: InitialCondition::Zero,
        };
        let mesh = build_square_mesh(1.0, 0.05).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 0.05).unwrap();
        let xs = vec![Point::new2(0.25, 0.25), Point::new2(0.75, 0.75)];
        let src = SourceModel::from_fns(
            xs.clone(),
            &grid.times(),
            &[&|t: f64| 0.5 * (-5.0 * t).exp(), &|t: f64| 0.25 * (-4.0 * t).exp()],
        )
        .unwrap();
        let trace = simulate(&cfg, &mesh, &src, &grid).unwrap();
        let m = harmonic_moments(&trace, &cfg, &mesh, 4).unwrap();
        let r = prony_recover(&m, 2).unwrap();
        for (p, x) in r.iter().zip(&xs) {
            assert!(p.location(&m).dist(x) < 3.0 * mesh.mesh_size, "{p:?}");
        }
        let zero = SourceModel::from_fns(xs, &grid.times(), &[&|_| 0.0, &|_| 0.0]).unwrap();
        let z = harmonic_moments(&simulate(&cfg, &mesh, &zero, &grid).unwrap(), &cfg, &mesh, 3).unwrap();
        assert!(z.values.iter().all(|v| v.norm() == 0.0));
    }
}
