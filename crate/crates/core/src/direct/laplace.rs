use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Point, ProblemConfig, SpaceMesh};
use crate::forward::{extend_in_time, BoundaryTrace, TimeGrid};

use super::probes::CaloricProbe;
use super::reciprocity::Pairing;

/// Laplace-domain boundary functional at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceValue {
    pub value: Complex64,
    /// `e^{-z T_e} ∫_Ω u(T_e) v_z`, the part of the transform beyond the recorded horizon `T_e`.
    pub end_term: Complex64,
    /// Set when `μ ≤ 0`: the field does not decay and the tail was cut at `T_e`.
    pub tail_truncated: bool,
}

/// Length of the source-free extension: `e^{-μ t_ext} = 1e-8` for `μ > 0`,
/// otherwise ten observation horizons.
pub fn tail_horizon(config: &ProblemConfig) -> f64 {
    if config.reaction > 0.0 {
        8.0 * std::f64::consts::LN_10 / config.reaction
    } else {
        10.0 * config.horizon
    }
}

/// Source-free continuation of `trace` over [`tail_horizon`], rounded up to whole steps.
pub fn extend_trace(trace: &BoundaryTrace, config: &ProblemConfig, mesh: &SpaceMesh) -> Result<BoundaryTrace> {
    let dt = trace.grid.dt;
    let steps = (tail_horizon(config) / dt).ceil().max(1.0);
    let t_ext = steps * dt;
    let t0 = trace.grid.t_end();
    let grid = TimeGrid::new(t0, t0 + t_ext, dt)?;
    extend_in_time(config, mesh, &trace.final_snapshot, t_ext, &grid)
}

/// Precomputed pairing of one trace (plus optional extension) with many
/// Laplace probes.
pub(crate) struct LaplaceData<'a, 'm> {
    pairing: Pairing<'m>,
    segments: Vec<&'a BoundaryTrace>,
    end_state: &'a [f64],
    end_time: f64,
    truncated: bool,
}

impl<'a, 'm> LaplaceData<'a, 'm> {
    pub fn new(
        trace: &'a BoundaryTrace,
        ext: Option<&'a BoundaryTrace>,
        config: &ProblemConfig,
        mesh: &'m SpaceMesh,
    ) -> Result<Self> {
        let pairing = Pairing::new(config, mesh)?;
        pairing.check(trace)?;
        let mut segments = vec![trace];
        if let Some(e) = ext {
            pairing.check(e)?;
            let gap = (e.grid.t0 - trace.grid.t_end()).abs();
            if gap > 1e-9 * trace.grid.t_end().max(1.0) {
                return Err(Error::IncompatibleGrid(format!(
                    "extension starts at {}, trace ends at {}",
                    e.grid.t0,
                    trace.grid.t_end()
                )));
            }
            segments.push(e);
        }
        let last = *segments.last().expect("at least the trace");
        Ok(LaplaceData {
            pairing,
            segments,
            end_state: &last.final_snapshot,
            end_time: last.grid.t_end(),
            truncated: config.reaction <= 0.0,
        })
    }

    pub fn evaluate(&self, probe: &CaloricProbe) -> Result<LaplaceValue> {
        if probe.dim != self.pairing.mesh.dim {
            return Err(Error::IncompatibleProbe(format!(
                "probe is {}-dimensional, mesh is {}-dimensional",
                probe.dim, self.pairing.mesh.dim
            )));
        }
        let z = probe.z;
        let flux = self.pairing.flux_weights(probe);
        let mut value = Complex64::new(0.0, 0.0);
        for seg in &self.segments {
            let g = &seg.grid;
            let decay = (-z * g.dt).exp();
            let mut kernel = (-z * g.t0).exp();
            for (n, w) in g.trapezoid_weights().into_iter().enumerate() {
                value += w * kernel * self.pairing.boundary_row(seg.row(n), &flux);
                kernel *= decay;
            }
        }
        let v = self.pairing.nodal(probe);
        let end_term = (-z * self.end_time).exp() * self.pairing.volume(self.end_state, &v).0;
        value += end_term;
        if let Some(u0) = &self.pairing.u0 {
            value -= self.pairing.volume(u0, &v).0;
        }
        Ok(LaplaceValue {
            value,
            end_term,
            tail_truncated: self.truncated,
        })
    }
}

/// `∫_0^{T_e} e^{-zt} ∮ u (∂_ν v_z + (A·ν) v_z) + e^{-z T_e} ∫_Ω u(T_e) v_z − ∫_Ω u_0 v_z`,
/// which equals `Σ_k λ̂_k(z) v_z(x_k)` with `λ̂_k(z) = ∫_0^T λ_k e^{-zt}`.
/// `T_e` is the end of `ext` when given, else the end of `trace`.
pub fn laplace_boundary_functional(
    trace: &BoundaryTrace,
    ext: Option<&BoundaryTrace>,
    probe: &CaloricProbe,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
) -> Result<LaplaceValue> {
    LaplaceData::new(trace, ext, config, mesh)?.evaluate(probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralWindow {
    Rectangular,
    /// `sinc(τ/R)` taper against Gibbs ringing of the truncated band.
    #[default]
    Lanczos,
}

impl SpectralWindow {
    pub fn factor(&self, tau: f64, radius: f64) -> f64 {
        match self {
            SpectralWindow::Rectangular => 1.0,
            SpectralWindow::Lanczos => {
                let s = PI * tau / radius;
                if s.abs() < 1e-12 {
                    1.0
                } else {
                    s.sin() / s
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeOptions {
    /// Laplace abscissa; defaults to [`default_abscissa`].
    pub sigma: Option<f64>,
    /// Band radius; defaults to [`default_radius`] of `noise_scale`.
    pub radius: Option<f64>,
    /// Relative noise level of the data, used only for the default radius.
    pub noise_scale: f64,
    /// Odd number of frequencies on `[-R, R]`; defaults to a spacing of at most 0.1.
    pub n_freq: Option<usize>,
    pub window: SpectralWindow,
    /// Average over the probe directions `±e_i` instead of using `e_1` only.
    pub average_directions: bool,
}

impl Default for AmplitudeOptions {
    fn default() -> Self {
        AmplitudeOptions {
            sigma: None,
            radius: None,
            noise_scale: 0.0,
            n_freq: None,
            window: SpectralWindow::Lanczos,
            average_directions: false,
        }
    }
}

pub fn default_abscissa(config: &ProblemConfig) -> f64 {
    1.0 + config.reaction.abs() + 0.25 * config.advection_norm_sq()
}

pub const MAX_RADIUS: f64 = 200.0;

/// `min(ln(1/γ)², 200)`; noise-free data get the cap.
pub fn default_radius(noise_scale: f64) -> f64 {
    if noise_scale > 0.0 && noise_scale < 1.0 {
        noise_scale.ln().powi(2).min(MAX_RADIUS)
    } else {
        MAX_RADIUS
    }
}

pub fn default_n_freq(radius: f64) -> usize {
    2 * (radius / 0.1).ceil() as usize + 1
}

/// Uniform odd-sized grid on `[-R, R]`.
pub fn frequency_grid(radius: f64, n_freq: usize) -> Result<Vec<f64>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidConfig(format!("band radius must be positive, got {radius}")));
    }
    if n_freq < 3 || n_freq % 2 == 0 {
        return Err(Error::InvalidConfig(format!("n_freq must be odd and >= 3, got {n_freq}")));
    }
    let h = 2.0 * radius / (n_freq - 1) as f64;
    let c = (n_freq / 2) as isize;
    Ok((0..n_freq).map(|j| (j as isize - c) as f64 * h).collect())
}

/// `λ(t) ≈ e^{σt}/(2π) ∫_{-R}^{R} W(τ) e^{iτt} λ̂(σ + iτ) dτ` by trapezoid.
/// Returns the real part at `times` and the RMS ratio of discarded imaginary to kept real parts.
pub fn band_limited_inverse(
    sigma: f64,
    frequencies: &[f64],
    hat_values: &[Complex64],
    window: SpectralWindow,
    times: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if frequencies.len() != hat_values.len() {
        return Err(Error::DimensionMismatch {
            expected: frequencies.len(),
            found: hat_values.len(),
        });
    }
    if frequencies.len() < 2 {
        return Err(Error::InvalidConfig("need at least two frequencies".into()));
    }
    let radius = frequencies.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let n = frequencies.len();
    let weighted: Vec<Complex64> = (0..n)
        .map(|j| {
            let h = if j == 0 {
                frequencies[1] - frequencies[0]
            } else if j == n - 1 {
                frequencies[n - 1] - frequencies[n - 2]
            } else {
                frequencies[j + 1] - frequencies[j - 1]
            };
            0.5 * h * window.factor(frequencies[j], radius) * hat_values[j]
        })
        .collect();
    let mut re = Vec::with_capacity(times.len());
    let (mut re2, mut im2) = (0.0, 0.0);
    for &t in times {
        let s: Complex64 = frequencies
            .iter()
            .zip(&weighted)
            .map(|(tau, w)| w * Complex64::from_polar(1.0, tau * t))
            .sum();
        let s = s * ((sigma * t).exp() / (2.0 * PI));
        re2 += s.re * s.re;
        im2 += s.im * s.im;
        re.push(s.re);
    }
    let residue = if re2 > 0.0 { (im2 / re2).sqrt() } else { im2.sqrt() };
    Ok((re, residue))
}

/// Band-limited reconstruction of a single amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEstimate {
    pub sigma: f64,
    pub radius: f64,
    pub frequencies: Vec<f64>,
    pub hat_values: Vec<Complex64>,
    pub grid: TimeGrid,
    pub time_samples: Vec<f64>,
    /// RMS ratio of the discarded imaginary part.
    pub imag_residue: f64,
    pub tail_truncated: bool,
}

impl AmplitudeEstimate {
    /// `time,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,value")?;
        for (k, v) in self.time_samples.iter().enumerate() {
            writeln!(w, "{:e},{v:e}", self.grid.time(k))?;
        }
        Ok(())
    }
}

/// Amplitude of a single source at `x_hat` from boundary data, on the trace's time grid.
pub fn recover_amplitude(
    trace: &BoundaryTrace,
    ext: Option<&BoundaryTrace>,
    x_hat: &Point,
    config: &ProblemConfig,
    mesh: &SpaceMesh,
    opts: &AmplitudeOptions,
) -> Result<AmplitudeEstimate> {
    if !mesh.contains(x_hat) {
        return Err(Error::OutsideDomain(x_hat.coords(mesh.dim).to_vec()));
    }
    let sigma = opts.sigma.unwrap_or_else(|| default_abscissa(config));
    let radius = opts.radius.unwrap_or_else(|| default_radius(opts.noise_scale));
    let n_freq = opts.n_freq.unwrap_or_else(|| default_n_freq(radius));
    let frequencies = frequency_grid(radius, n_freq)?;
    let data = LaplaceData::new(trace, ext, config, mesh)?;
    let mut directions: Vec<[f64; 2]> = vec![[1.0, 0.0]];
    if opts.average_directions {
        directions.push([-1.0, 0.0]);
        if config.dim > 1 {
            directions.push([0.0, 1.0]);
            directions.push([0.0, -1.0]);
        }
    }
    // real data: the transform at σ − iτ is the conjugate of that at σ + iτ
    let centre = n_freq / 2;
    let mut hat_values = vec![Complex64::new(0.0, 0.0); n_freq];
    let mut tail_truncated = false;
    for j in centre..n_freq {
        let z = Complex64::new(sigma, frequencies[j]);
        let mut acc = Complex64::new(0.0, 0.0);
        for d in &directions {
            let probe = CaloricProbe::laplace(config, z, d, *x_hat)?;
            let lv = data.evaluate(&probe)?;
            tail_truncated |= lv.tail_truncated;
            acc += lv.value;
        }
        hat_values[j] = acc / directions.len() as f64;
        hat_values[2 * centre - j] = hat_values[j].conj();
    }
    let times = trace.grid.times();
    let (time_samples, imag_residue) =
        band_limited_inverse(sigma, &frequencies, &hat_values, opts.window, &times)?;
    Ok(AmplitudeEstimate {
        sigma,
        radius,
        frequencies,
        hat_values,
        grid: trace.grid,
        time_samples,
        imag_residue,
        tail_truncated,
    })
}
