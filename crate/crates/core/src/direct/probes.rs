use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Point, ProblemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// `e^{-A·(x-a)/2} e^{κ ω·(x-a)}` with `z = 0`.
    Exp,
    /// `e^{-A·(x-a)/2} ((x-a)_1 + i (x-a)_2)^k`, needs `μ + |A|²/4 = 0`.
    Poly,
    /// As `Exp` with complex `z`.
    Laplace,
    /// `e^{-A(x-a)/2} (x-a)^k`, `k ∈ {0, 1}`, 1D with `μ + A²/4 = 0`.
    Affine1d,
}

/// Closed-form solution `v` of `-Δv - A·∇v + μv + z·v = 0`.
///
/// Every kind factors as `v = e^{-A·(x-a)/2} g(x - a)` with `Δg = κ² g`,
/// where `a` is the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaloricProbe {
    pub kind: ProbeKind,
    pub direction: [f64; 2],
    pub z: Complex64,
    pub degree: u32,
    pub anchor: Point,
    pub kappa: Complex64,
    pub dim: usize,
    pub advection: [f64; 2],
    pub reaction: f64,
}

fn advection_pair(config: &ProblemConfig) -> [f64; 2] {
    let mut a = [0.0; 2];
    for (d, s) in a.iter_mut().zip(&config.advection) {
        *d = *s;
    }
    a
}

fn unit(direction: &[f64], dim: usize) -> Result<[f64; 2]> {
    let mut w = [0.0; 2];
    for (d, s) in w.iter_mut().zip(direction.iter().take(dim)) {
        *d = *s;
    }
    let n = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::IncompatibleProbe(format!("direction {direction:?} has no length")));
    }
    Ok([w[0] / n, w[1] / n])
}

impl CaloricProbe {
    fn base(kind: ProbeKind, config: &ProblemConfig, z: Complex64, anchor: Point) -> Self {
        let kappa = (Complex64::new(config.effective_reaction(), 0.0) + z).sqrt();
        CaloricProbe {
            kind,
            direction: [1.0, 0.0],
            z,
            degree: 0,
            anchor,
            kappa,
            dim: config.dim,
            advection: advection_pair(config),
            reaction: config.reaction,
        }
    }

    /// Steady exponential probe along `direction`.
    pub fn exp(config: &ProblemConfig, direction: &[f64], anchor: Point) -> Result<Self> {
        let mut p = Self::base(ProbeKind::Exp, config, Complex64::new(0.0, 0.0), anchor);
        p.direction = unit(direction, config.dim)?;
        Ok(p)
    }

    /// Exponential probe at Laplace frequency `z`.
    pub fn laplace(config: &ProblemConfig, z: Complex64, direction: &[f64], anchor: Point) -> Result<Self> {
        let mut p = Self::base(ProbeKind::Laplace, config, z, anchor);
        p.direction = unit(direction, config.dim)?;
        Ok(p)
    }

    /// Harmonic monomial of degree `k` in `x_1 + i x_2`.
    pub fn poly(config: &ProblemConfig, degree: u32, anchor: Point) -> Result<Self> {
        if config.dim != 2 {
            return Err(Error::IncompatibleProbe("polynomial probes need d = 2".into()));
        }
        check_critical(config)?;
        let mut p = Self::base(ProbeKind::Poly, config, Complex64::new(0.0, 0.0), anchor);
        p.kappa = Complex64::new(0.0, 0.0);
        p.degree = degree;
        Ok(p)
    }

    pub fn affine_1d(config: &ProblemConfig, degree: u32, anchor: Point) -> Result<Self> {
        if config.dim != 1 || degree > 1 {
            return Err(Error::IncompatibleProbe(
                "affine probes need d = 1 and degree 0 or 1".into(),
            ));
        }
        check_critical(config)?;
        let mut p = Self::base(ProbeKind::Affine1d, config, Complex64::new(0.0, 0.0), anchor);
        p.kappa = Complex64::new(0.0, 0.0);
        p.degree = degree;
        Ok(p)
    }

    pub fn is_steady(&self) -> bool {
        self.z == Complex64::new(0.0, 0.0)
    }

    fn shifted(&self, x: &Point) -> [f64; 2] {
        let mut s = [x[0] - self.anchor[0], 0.0];
        if self.dim > 1 {
            s[1] = x[1] - self.anchor[1];
        }
        s
    }

    fn weight(&self, s: &[f64; 2]) -> f64 {
        (-0.5 * (self.advection[0] * s[0] + self.advection[1] * s[1])).exp()
    }

    /// `g` and `∇g` at the shifted point.
    fn core(&self, s: &[f64; 2]) -> (Complex64, [Complex64; 2]) {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        match self.kind {
            ProbeKind::Exp | ProbeKind::Laplace => {
                let w = self.direction;
                let g = (self.kappa * (w[0] * s[0] + w[1] * s[1])).exp();
                (g, [self.kappa * w[0] * g, self.kappa * w[1] * g])
            }
            ProbeKind::Poly => {
                let zeta = Complex64::new(s[0], s[1]);
                let k = self.degree;
                if k == 0 {
                    return (one, [zero, zero]);
                }
                let d = zeta.powu(k - 1) * k as f64;
                (zeta.powu(k), [d, d * Complex64::i()])
            }
            ProbeKind::Affine1d => match self.degree {
                0 => (one, [zero, zero]),
                _ => (Complex64::new(s[0], 0.0), [one, zero]),
            },
        }
    }

    pub fn value(&self, x: &Point) -> Complex64 {
        let s = self.shifted(x);
        self.core(&s).0 * self.weight(&s)
    }

    pub fn gradient(&self, x: &Point) -> [Complex64; 2] {
        let s = self.shifted(x);
        let e = self.weight(&s);
        let (g, dg) = self.core(&s);
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for a in 0..self.dim {
            out[a] = e * (dg[a] - 0.5 * self.advection[a] * g);
        }
        out
    }

    /// Boundary flux `∂_ν v + (A·ν) v` for outward normal `normal`.
    pub fn flux(&self, x: &Point, normal: &[f64; 2]) -> Complex64 {
        let g = self.gradient(x);
        let v = self.value(x);
        let mut f = Complex64::new(0.0, 0.0);
        for a in 0..self.dim {
            f += g[a] * normal[a] + self.advection[a] * normal[a] * v;
        }
        f
    }

    /// Centered finite-difference value of `-Δv - A·∇v + μv + zv` at `x`.
    pub fn fd_residual(&self, x: &Point, h: f64) -> Complex64 {
        let v = self.value(x);
        let mut lap = Complex64::new(0.0, 0.0);
        let mut adv = Complex64::new(0.0, 0.0);
        for a in 0..self.dim {
            let mut p = *x;
            let mut m = *x;
            p[a] += h;
            m[a] -= h;
            let (vp, vm) = (self.value(&p), self.value(&m));
            lap += (vp - 2.0 * v + vm) / (h * h);
            adv += self.advection[a] * (vp - vm) / (2.0 * h);
        }
        -lap - adv + (self.reaction + self.z) * v
    }
}

fn check_critical(config: &ProblemConfig) -> Result<()> {
    let m = config.effective_reaction();
    if m.abs() > 1e-12 * (1.0 + config.reaction.abs()) {
        return Err(Error::IncompatibleProbe(format!(
            "harmonic probes need mu + |A|^2/4 = 0, got {m}"
        )));
    }
    Ok(())
}
