//! Analytic references for `A = 0` on boxes (Neumann eigen-expansion) and for
//! short times (free-space kernel). Both are independent of the FEM path.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{Point, ProblemConfig, SourceModel};
use crate::quad::adaptive_simpson;

use super::TimeGrid;

/// `∫_0^L e^{-c r} dr` and `∫_0^L r e^{-c r} dr`.
fn exp_moments(c: f64, len: f64) -> (f64, f64) {
    let x = c * len;
    if x.abs() < 1e-3 {
        let e0 = len * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0);
        let e1 = len * len * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0);
        (e0, e1)
    } else {
        let e0 = -(-x).exp_m1() / c;
        let e1 = (-(-x).exp_m1() - x * (-x).exp()) / (c * c);
        (e0, e1)
    }
}

/// `∫_a^b e^{-c(b-s)} λ(s) ds` for `λ` linear on `[a, b]` with end values `la`, `lb`.
fn linear_segment(c: f64, a: f64, b: f64, la: f64, lb: f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let (e0, e1) = exp_moments(c, len);
    lb * e0 + (la - lb) / len * e1
}

/// `∫_a^b e^{-c(b-s)} λ_k(s) ds` with `λ_k` the piecewise-linear interpolant
/// of the samples; exact up to rounding.
fn convolve_piecewise(c: f64, sources: &SourceModel, k: usize, a: f64, b: f64) -> f64 {
    let grid = &sources.amplitude_grid;
    let lo = grid.partition_point(|&g| g <= a);
    let hi = grid.partition_point(|&g| g < b);
    let mut breaks = Vec::with_capacity(hi.saturating_sub(lo) + 2);
    breaks.push(a);
    breaks.extend_from_slice(&grid[lo..hi.max(lo)]);
    breaks.push(b);
    let mut acc = 0.0;
    for w in breaks.windows(2) {
        let la = sources.amplitude_at(k, w[0]);
        let lb = sources.amplitude_at(k, w[1]);
        acc = acc * (-c * (w[1] - w[0])).exp() + linear_segment(c, w[0], w[1], la, lb);
    }
    acc
}

fn check_box(config: &ProblemConfig) -> Result<()> {
    config.validate()?;
    if config.advection.iter().any(|&a| a != 0.0) {
        return Err(Error::InvalidConfig(
            "spectral reference requires zero advection".into(),
        ));
    }
    Ok(())
}

/// Neumann eigenfunction `m` on `(0, ℓ)` and its eigenvalue.
fn eigen_1d(m: usize, len: f64, x: f64) -> f64 {
    if m == 0 {
        1.0 / len.sqrt()
    } else {
        (2.0 / len).sqrt() * (m as f64 * PI * x / len).cos()
    }
}

fn eigenvalue_1d(m: usize, len: f64) -> f64 {
    let k = m as f64 * PI / len;
    k * k
}

/// Tensor mode indices and eigenvalues, `n_modes` per axis.
fn modes(dim: usize, n_modes: usize, len: f64) -> Vec<([usize; 2], f64)> {
    match dim {
        1 => (0..n_modes).map(|m| ([m, 0], eigenvalue_1d(m, len))).collect(),
        _ => (0..n_modes)
            .flat_map(|m1| {
                (0..n_modes).map(move |m2| ([m1, m2], eigenvalue_1d(m1, len) + eigenvalue_1d(m2, len)))
            })
            .collect(),
    }
}

fn mode_value(dim: usize, m: [usize; 2], len: f64, p: &Point) -> f64 {
    (0..dim).map(|a| eigen_1d(m[a], len, p[a])).product()
}

/// Partial eigen-expansion `Σ_m φ_m(x) Σ_k φ_m(x_k) ∫_0^t e^{-(ρ_m+μ)(t-s)} λ_k(s) ds`
/// with `n_modes` modes per axis.
pub fn spectral_reference(
    config: &ProblemConfig,
    sources: &SourceModel,
    x_eval: &Point,
    t: f64,
    n_modes: usize,
) -> Result<f64> {
    check_box(config)?;
    let len = config.domain_length;
    let mut total = 0.0;
    for (m, rho) in modes(config.dim, n_modes, len) {
        let c = rho + config.reaction;
        let phi_x = mode_value(config.dim, m, len, x_eval);
        if phi_x == 0.0 {
            continue;
        }
        let conv: f64 = (0..sources.n_sources())
            .map(|k| mode_value(config.dim, m, len, &sources.locations[k]) * convolve_piecewise(c, sources, k, 0.0, t))
            .sum();
        total += phi_x * conv;
    }
    Ok(total)
}

/// Spectral reference at `points` for every time of `grid`; row-major
/// `(n_steps + 1) × points.len()`. Modal amplitudes are advanced step by step.
pub fn spectral_trace(
    config: &ProblemConfig,
    sources: &SourceModel,
    points: &[Point],
    grid: &TimeGrid,
    n_modes: usize,
) -> Result<Vec<f64>> {
    check_box(config)?;
    let len = config.domain_length;
    let modes = modes(config.dim, n_modes, len);
    let weights: Vec<Vec<f64>> = modes
        .iter()
        .map(|(m, _)| {
            sources
                .locations
                .iter()
                .map(|x| mode_value(config.dim, *m, len, x))
                .collect()
        })
        .collect();
    let at_points: Vec<Vec<f64>> = modes
        .iter()
        .map(|(m, _)| points.iter().map(|p| mode_value(config.dim, *m, len, p)).collect())
        .collect();
    let mut state = vec![0.0; modes.len()];
    let mut out = vec![0.0; (grid.n_steps + 1) * points.len()];
    if grid.t0 > 0.0 {
        for (q, (_, rho)) in modes.iter().enumerate() {
            let c = rho + config.reaction;
            state[q] = (0..sources.n_sources())
                .map(|k| weights[q][k] * convolve_piecewise(c, sources, k, 0.0, grid.t0))
                .sum();
        }
    }
    for n in 0..=grid.n_steps {
        if n > 0 {
            let (prev, t) = (grid.time(n - 1), grid.time(n));
            for (q, (_, rho)) in modes.iter().enumerate() {
                let c = rho + config.reaction;
                let inc: f64 = (0..sources.n_sources())
                    .map(|k| weights[q][k] * convolve_piecewise(c, sources, k, prev, t))
                    .sum();
                state[q] = state[q] * (-c * (t - prev)).exp() + inc;
            }
        }
        let row = &mut out[n * points.len()..(n + 1) * points.len()];
        for (q, s) in state.iter().enumerate() {
            if *s == 0.0 {
                continue;
            }
            for (v, phi) in row.iter_mut().zip(&at_points[q]) {
                *v += s * phi;
            }
        }
    }
    Ok(out)
}

/// Whole-space solution of one source,
/// `(4π)^{-d/2} e^{A·(x-x_j)/2} ∫_0^t e^{τ0(t-s)} λ(s) e^{-|x-x_j|²/(4(t-s))} (t-s)^{-d/2} ds`
/// with `τ0 = -|A|²/4 - μ`, integrated after `s = t - r²`.
pub fn freespace_kernel(
    config: &ProblemConfig,
    location: &Point,
    amplitude: &dyn Fn(f64) -> f64,
    x: &Point,
    t: f64,
) -> Result<f64> {
    freespace_kernel_tol(config, location, amplitude, x, t, 1e-10)
}

pub(crate) fn freespace_kernel_tol(
    config: &ProblemConfig,
    location: &Point,
    amplitude: &dyn Fn(f64) -> f64,
    x: &Point,
    t: f64,
    tol: f64,
) -> Result<f64> {
    let d = config.dim;
    let dist_sq: f64 = (0..d).map(|a| (x[a] - location[a]).powi(2)).sum();
    if dist_sq == 0.0 {
        return Err(Error::InvalidConfig("free-space kernel is singular at the source".into()));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let tau0 = -0.25 * config.advection_norm_sq() - config.reaction;
    let drift: f64 = (0..d).map(|a| 0.5 * config.advection[a] * (x[a] - location[a])).sum();
    let prefactor = (4.0 * PI).powf(-(d as f64) / 2.0) * drift.exp();
    let integrand = |r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        let r2 = r * r;
        let gauss = (-dist_sq / (4.0 * r2)).exp();
        if gauss == 0.0 {
            return 0.0;
        }
        2.0 * r * (tau0 * r2).exp() * amplitude(t - r2) * gauss / r2.powf(d as f64 / 2.0)
    };
    Ok(prefactor * adaptive_simpson(&integrand, 0.0, t.sqrt(), tol / prefactor.max(1e-300)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::InitialCondition;

    fn config(dim: usize, mu: f64) -> ProblemConfig {
        ProblemConfig {
            dim,
            domain_length: 1.0,
            advection: vec![0.0; dim],
            reaction: mu,
            horizon: 2.0,
            support_end: 1.0,
            obs_start: 1.5,
            initial_condition: InitialCondition::Zero,
        }
    }

    #[test]
    fn segment_integral_matches_quadrature() {
        for c in [0.0, 1e-6, 0.5, 30.0, -2.0] {
            let exact = linear_segment(c, 0.3, 0.9, 2.0, -1.0);
            let f = |s: f64| (-c * (0.9 - s)).exp() * (2.0 + (-3.0) * (s - 0.3) / 0.6);
            let q = adaptive_simpson(&f, 0.3, 0.9, 1e-13);
            assert!((exact - q).abs() < 1e-11, "c={c}: {exact} vs {q}");
        }
    }

    #[test]
    fn zero_amplitude_gives_zero() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let src = SourceModel::from_fns(vec![Point::new1(0.5)], &grid, &[&|_| 0.0]).unwrap();
        assert_eq!(spectral_reference(&config(1, 1.0), &src, &Point::new1(0.2), 1.0, 50).unwrap(), 0.0);
        let cfg = config(1, 1.0);
        let v = freespace_kernel(&cfg, &Point::new1(0.5), &|_| 0.0, &Point::new1(0.6), 0.3).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn zero_mode_is_mass_injection() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        for (dim, len) in [(1usize, 1.0), (1, 2.0), (2, 1.5)] {
            let mut cfg = config(dim, 0.0);
            cfg.domain_length = len;
            let loc = if dim == 1 { Point::new1(0.3) } else { Point::new2(0.3, 0.8) };
            let src = SourceModel::from_fns(vec![loc], &grid, &[&|_| 1.0]).unwrap();
            let v = spectral_reference(&cfg, &src, &Point::new1(0.9), 1.3, 1).unwrap();
            assert!((v - 1.3 / len.powi(dim as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_recursion_matches_pointwise_sum() {
        let g = TimeGrid::new(0.0, 2.0, 0.05).unwrap();
        let src = SourceModel::from_fns(
            vec![Point::new2(0.3, 0.6)],
            &g.times(),
            &[&|t: f64| 0.5 * (-5.0 * t).exp()],
        )
        .unwrap();
        let cfg = config(2, 1.0);
        let pts = [Point::new2(0.0, 0.0), Point::new2(1.0, 0.4)];
        let tr = spectral_trace(&cfg, &src, &pts, &g, 12).unwrap();
        for n in [0, 1, 7, 40] {
            for (p, pt) in pts.iter().enumerate() {
                let v = spectral_reference(&cfg, &src, pt, g.time(n), 12).unwrap();
                assert!((tr[n * 2 + p] - v).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn advection_is_rejected() {
        let mut cfg = config(1, 1.0);
        cfg.advection = vec![0.5];
        let src = SourceModel::from_fns(vec![Point::new1(0.5)], &[0.0, 2.0], &[&|_| 1.0]).unwrap();
        assert!(spectral_reference(&cfg, &src, &Point::new1(0.0), 1.0, 10).is_err());
    }

    #[test]
    fn heat_kernel_self_consistency() {
        let cfg = config(1, 0.0);
        let x_j = Point::new1(0.5);
        for (x, t) in [(0.6, 0.05), (0.9, 0.5), (0.1, 1.0)] {
            let coarse = freespace_kernel(&cfg, &x_j, &|_| 1.0, &Point::new1(x), t).unwrap();
            let fine = freespace_kernel_tol(&cfg, &x_j, &|_| 1.0, &Point::new1(x), t, 5e-11).unwrap();
            assert!((coarse - fine).abs() < 1e-9, "{coarse} vs {fine}");
            // constant source: ∫_0^t e^{-D²/(4r)} / sqrt(4πr) dr in the original variable
            let d2 = (x - 0.5f64).powi(2);
            let direct = adaptive_simpson(
                &|r: f64| if r == 0.0 { 0.0 } else { (-d2 / (4.0 * r)).exp() / (4.0 * PI * r).sqrt() },
                0.0,
                t,
                1e-12,
            );
            assert!((coarse - direct).abs() < 1e-8, "{coarse} vs {direct}");
        }
        assert!(freespace_kernel(&cfg, &x_j, &|_| 1.0, &x_j, 0.5).is_err());
    }
}
