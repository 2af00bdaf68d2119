use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{build_interval_mesh, build_square_mesh, InitialCondition, Point, ProblemConfig, SourceModel, SpaceMesh};
use crate::forward::TimeGrid;
use crate::lm::{JacobianBackend, LmParams, LmSchedule, StopRule};

/// Closed-form amplitude `λ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AmplitudeFn {
    Zero,
    Const { value: f64 },
    /// `scale·e^{-rate·t}`
    Exp { scale: f64, rate: f64 },
    /// `height` on `[0, end]`, zero after; sampled left-continuously.
    Step { height: f64, end: f64 },
}

impl AmplitudeFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            AmplitudeFn::Zero => 0.0,
            AmplitudeFn::Const { value } => value,
            AmplitudeFn::Exp { scale, rate } => scale * (-rate * t).exp(),
            AmplitudeFn::Step { height, end } => {
                // grid times carry rounding; a sample at the jump keeps the left value
                if t <= end + 1e-9 * end.abs().max(1.0) {
                    height
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.times().into_iter().map(|t| self.eval(t)).collect()
    }

    /// True when `λ` vanishes identically after `t0`.
    pub fn vanishes_after(&self, t0: f64) -> bool {
        match *self {
            AmplitudeFn::Zero => true,
            AmplitudeFn::Const { value } => value == 0.0,
            AmplitudeFn::Exp { scale, .. } => scale == 0.0,
            AmplitudeFn::Step { height, end } => height == 0.0 || end <= t0 + 1e-12,
        }
    }
}

impl fmt::Display for AmplitudeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmplitudeFn::Zero => write!(f, "zero"),
            AmplitudeFn::Const { value } => write!(f, "const({value})"),
            AmplitudeFn::Exp { scale, rate } => write!(f, "exp({scale},{rate})"),
            AmplitudeFn::Step { height, end } => write!(f, "step({height},{end})"),
        }
    }
}

impl FromStr for AmplitudeFn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "zero" {
            return Ok(AmplitudeFn::Zero);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("bad amplitude '{s}'"))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("missing ')' in '{s}'"))?;
        let args = parse_list(args)?;
        match (name.trim(), args.as_slice()) {
            ("const", [v]) => Ok(AmplitudeFn::Const { value: *v }),
            ("exp", [a, r]) => Ok(AmplitudeFn::Exp { scale: *a, rate: *r }),
            ("step", [h, e]) => Ok(AmplitudeFn::Step { height: *h, end: *e }),
            _ => Err(format!("unknown amplitude '{s}' (expected zero, const(v), exp(a,r), step(h,end))")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub location: Point,
    pub amplitude: AmplitudeFn,
}

fn fmt_sources(dim: usize, s: &[SourceSpec]) -> String {
    s.iter()
        .map(|src| {
            let c: Vec<String> = src.location.coords(dim).iter().map(|v| v.to_string()).collect();
            format!("{} : {}", c.join(","), src.amplitude)
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

fn parse_sources(s: &str) -> std::result::Result<Vec<SourceSpec>, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let (loc, amp) = part
                .split_once(':')
                .ok_or_else(|| format!("source '{}' needs '<coords> : <amplitude>'", part.trim()))?;
            let c = parse_list(loc)?;
            if c.is_empty() || c.len() > 2 {
                return Err(format!("source location '{}' needs 1 or 2 coordinates", loc.trim()));
            }
            Ok(SourceSpec {
                location: Point::from_slice(&c),
                amplitude: amp.parse()?,
            })
        })
        .collect()
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", p.trim())))
        .collect()
}

/// `0.5%` is a percentage, a bare number a fraction.
pub fn parse_noise_level(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = match s.strip_suffix('%') {
        Some(p) => p.trim().parse::<f64>().map(|v| v / 100.0),
        None => s.parse::<f64>(),
    }
    .map_err(|e| format!("noise level '{s}': {e}"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(format!("noise level must be nonnegative, got '{s}'"));
    }
    Ok(v)
}

/// Levenberg–Marquardt settings that do not depend on the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmSettings {
    pub beta_x0: f64,
    pub beta_lambda0: f64,
    pub gamma_x: f64,
    pub gamma_lambda: f64,
    pub max_iters: usize,
    /// Discrepancy factor; 0 disables the rule.
    pub eta: f64,
    pub backend: JacobianBackend,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            beta_x0: 1.0,
            beta_lambda0: 50.0,
            gamma_x: 0.8,
            gamma_lambda: 0.8,
            max_iters: 100,
            eta: 1.1,
            backend: JacobianBackend::Convolution,
        }
    }
}

impl LmSettings {
    pub fn schedule(&self, mesh_size: f64, noise_std: f64) -> LmSchedule {
        let mut s = LmSchedule::new(
            self.beta_x0,
            self.beta_lambda0,
            (self.gamma_x, self.gamma_lambda),
            mesh_size,
            noise_std,
        );
        s.max_iters = self.max_iters;
        s.backend = self.backend;
        s.stop_rule = if self.eta > 0.0 {
            StopRule::Discrepancy { eta: self.eta, noise_std }
        } else {
            StopRule::MaxIters
        };
        s
    }
}

/// Step sizes `(dt, dx)` of one discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub dt: f64,
    pub dx: f64,
}

impl Resolution {
    pub fn scaled(self, factor: f64) -> Self {
        Resolution {
            dt: self.dt * factor,
            dx: self.dx * factor,
        }
    }
}

/// A complete synthetic problem: model, true sources, grids and the initial guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ProblemConfig,
    pub sources: Vec<SourceSpec>,
    pub init: Vec<SourceSpec>,
    /// Data generation grid.
    pub fine: Resolution,
    /// Inversion grid.
    pub inversion: Resolution,
    pub lm: LmSettings,
}

fn ratio(coarse: f64, fine: f64, what: &str) -> Result<usize> {
    let r = coarse / fine;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-8 * r {
        return Err(Error::IncompatibleGrid(format!(
            "inversion {what} {coarse} is not a multiple of the fine {what} {fine}"
        )));
    }
    Ok(n as usize)
}

pub(crate) fn build_mesh(dim: usize, length: f64, h: f64) -> Result<SpaceMesh> {
    match dim {
        1 => build_interval_mesh(length, h),
        2 => build_square_mesh(length, h),
        d => Err(Error::InvalidConfig(format!("dim must be 1 or 2, got {d}"))),
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig("at least one source is required".into()));
        }
        if self.init.len() != self.sources.len() {
            return Err(Error::InvalidConfig(format!(
                "{} initial guesses for {} sources",
                self.init.len(),
                self.sources.len()
            )));
        }
        for r in [self.fine, self.inversion] {
            if !(r.dt > 0.0 && r.dx > 0.0) {
                return Err(Error::InvalidConfig("step sizes must be positive".into()));
            }
        }
        self.time_ratio()?;
        self.space_ratio()?;
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn time_ratio(&self) -> Result<usize> {
        ratio(self.inversion.dt, self.fine.dt, "dt")
    }

    pub fn space_ratio(&self) -> Result<usize> {
        ratio(self.inversion.dx, self.fine.dx, "dx")
    }

    /// True when some amplitude does not vanish after `T0`, so the support
    /// condition holds only approximately.
    pub fn approximate_support(&self) -> bool {
        self.sources
            .iter()
            .any(|s| !s.amplitude.vanishes_after(self.config.support_end))
    }

    pub fn fine_mesh(&self) -> Result<SpaceMesh> {
        build_mesh(self.config.dim, self.config.domain_length, self.fine.dx)
    }

    pub fn inversion_mesh(&self) -> Result<SpaceMesh> {
        build_mesh(self.config.dim, self.config.domain_length, self.inversion.dx)
    }

    pub fn fine_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.config.horizon, self.fine.dt)
    }

    pub fn inversion_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.config.horizon, self.inversion.dt)
    }

    pub fn truth_model(&self, grid: &TimeGrid) -> Result<SourceModel> {
        let p = Self::params_of(&self.sources, grid);
        SourceModel::new(p.locations, grid.times(), p.amplitudes)
    }

    pub fn truth_params(&self, grid: &TimeGrid) -> LmParams {
        Self::params_of(&self.sources, grid)
    }

    pub fn init_params(&self, grid: &TimeGrid) -> LmParams {
        Self::params_of(&self.init, grid)
    }

    fn params_of(specs: &[SourceSpec], grid: &TimeGrid) -> LmParams {
        LmParams {
            locations: specs.iter().map(|s| s.location).collect(),
            amplitudes: specs.iter().map(|s| s.amplitude.sample(grid)).collect(),
        }
    }

    /// Flat `key = value` text accepted by [`RunConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let c = &self.config;
        let a: Vec<String> = c.advection.iter().map(|v| v.to_string()).collect();
        let lm = &self.lm;
        let backend = match lm.backend {
            JacobianBackend::Convolution => "convolution",
            JacobianBackend::Pde => "pde",
        };
        let lines = [
            format!("dim = {}", c.dim),
            format!("domain = {}", c.domain_length),
            format!("A = {}", a.join(",")),
            format!("mu = {}", c.reaction),
            format!("T = {}", c.horizon),
            format!("T0 = {}", c.support_end),
            format!("T1 = {}", c.obs_start),
            format!("dt_fine = {}", self.fine.dt),
            format!("dx_fine = {}", self.fine.dx),
            format!("dt_inv = {}", self.inversion.dt),
            format!("dx_inv = {}", self.inversion.dx),
            format!("sources = {}", fmt_sources(c.dim, &self.sources)),
            format!("init = {}", fmt_sources(c.dim, &self.init)),
            format!("lm.beta_x = {}", lm.beta_x0),
            format!("lm.beta_lambda = {}", lm.beta_lambda0),
            format!("lm.gamma_x = {}", lm.gamma_x),
            format!("lm.gamma_lambda = {}", lm.gamma_lambda),
            format!("lm.max_iters = {}", lm.max_iters),
            format!("lm.eta = {}", lm.eta),
            format!("lm.backend = {backend}"),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

/// A scenario plus the noise applied by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub noise: f64,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "dim", "domain", "A", "mu", "T", "T0", "T1", "dt_fine", "dx_fine", "dt_inv", "dx_inv", "sources", "init",
    "noise", "seed", "lm.beta_x", "lm.beta_lambda", "lm.gamma_x", "lm.gamma_lambda", "lm.max_iters", "lm.eta",
    "lm.backend",
];

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key = value, got '{line}'"),
        })?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key '{k}'"),
            });
        }
    }
    Ok(out)
}

struct Fields(BTreeMap<String, (usize, String)>);

impl Fields {
    fn get<T, F>(&self, key: &str, parse: F) -> Result<Option<T>>
    where
        F: Fn(&str) -> std::result::Result<T, String>,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => parse(v).map(Some).map_err(|message| Error::Parse {
                line: *line,
                message: format!("{key}: {message}"),
            }),
        }
    }

    fn num(&self, key: &str) -> Result<Option<f64>> {
        self.get(key, |v| v.parse::<f64>().map_err(|e| e.to_string()))
    }

    fn required(&self, key: &str) -> Result<f64> {
        self.num(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing required key '{key}'")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        for (k, (line, _)) in &map {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown key '{k}'"),
                });
            }
        }
        let f = Fields(map);
        let dim = f.required("dim")? as usize;
        let horizon = f.required("T")?;
        let advection = f.get("A", parse_list)?.unwrap_or_else(|| vec![0.0; dim]);
        let config = ProblemConfig {
            dim,
            domain_length: f.num("domain")?.unwrap_or(1.0),
            advection,
            reaction: f.num("mu")?.unwrap_or(0.0),
            horizon,
            support_end: f.num("T0")?.unwrap_or(0.5 * horizon),
            obs_start: f.num("T1")?.unwrap_or(0.75 * horizon),
            initial_condition: InitialCondition::Zero,
        };
        let sources = f
            .get("sources", parse_sources)?
            .ok_or_else(|| Error::InvalidConfig("missing required key 'sources'".into()))?;
        let centre = Point([0.5 * config.domain_length; 2]);
        let init = f.get("init", parse_sources)?.unwrap_or_else(|| {
            sources
                .iter()
                .map(|_| SourceSpec {
                    location: centre,
                    amplitude: AmplitudeFn::Zero,
                })
                .collect()
        });
        let fine = Resolution {
            dt: f.required("dt_fine")?,
            dx: f.required("dx_fine")?,
        };
        let inversion = Resolution {
            dt: f.num("dt_inv")?.unwrap_or(fine.dt),
            dx: f.num("dx_inv")?.unwrap_or(fine.dx),
        };
        let d = LmSettings::default();
        let lm = LmSettings {
            beta_x0: f.num("lm.beta_x")?.unwrap_or(d.beta_x0),
            beta_lambda0: f.num("lm.beta_lambda")?.unwrap_or(d.beta_lambda0),
            gamma_x: f.num("lm.gamma_x")?.unwrap_or(d.gamma_x),
            gamma_lambda: f.num("lm.gamma_lambda")?.unwrap_or(d.gamma_lambda),
            max_iters: f
                .get("lm.max_iters", |v| v.parse::<usize>().map_err(|e| e.to_string()))?
                .unwrap_or(d.max_iters),
            eta: f.num("lm.eta")?.unwrap_or(d.eta),
            backend: f
                .get("lm.backend", |v| match v {
                    "convolution" => Ok(JacobianBackend::Convolution),
                    "pde" => Ok(JacobianBackend::Pde),
                    _ => Err(format!("unknown backend '{v}'")),
                })?
                .unwrap_or(d.backend),
        };
        let scenario = Scenario {
            config,
            sources,
            init,
            fine,
            inversion,
            lm,
        };
        scenario.validate()?;
        Ok(RunConfig {
            scenario,
            noise: f.get("noise", parse_noise_level)?.unwrap_or(0.0),
            seed: f
                .get("seed", |v| v.parse::<u64>().map_err(|e| e.to_string()))?
                .unwrap_or(0),
        })
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "{}noise = {}\nseed = {}\n",
            self.scenario.to_config_text(),
            self.noise,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
# two sources
dim = 2
T = 2
mu = 1
T0 = 1
T1 = 1.5
dt_fine = 0.005
dx_fine = 0.005
dt_inv = 0.02
dx_inv = 0.02
sources = 0.25,0.25 : exp(0.5,5) ; 0.75,0.75 : step(1,0.6)
init = 0.2,0.2 : exp(0.4,5) ; 0.8,0.8 : zero
noise = 0.5%
";

    #[test]
    fn parses_flat_config() {
        let rc = RunConfig::parse(TEXT).unwrap();
        let s = &rc.scenario;
        assert_eq!(s.config.advection, vec![0.0, 0.0]);
        assert_eq!(s.n_sources(), 2);
        assert_eq!(s.sources[1].amplitude, AmplitudeFn::Step { height: 1.0, end: 0.6 });
        assert_eq!(s.time_ratio().unwrap(), 4);
        assert!((rc.noise - 0.005).abs() < 1e-15);
        assert!(s.approximate_support());
    }

    #[test]
    fn text_round_trip() {
        let rc = RunConfig::parse(TEXT).unwrap();
        assert_eq!(RunConfig::parse(&rc.to_config_text()).unwrap(), rc);
    }

    #[test]
    fn reports_line_of_bad_value() {
        let bad = TEXT.replace("mu = 1", "mu = one");
        match RunConfig::parse(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::parse("dim = 1\nfoo = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::parse("dim 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse("dim = 1\ndim = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::parse("dim = 1\nT = 2\n"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_incommensurate_grids() {
        let bad = TEXT.replace("dt_inv = 0.02", "dt_inv = 0.013");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::IncompatibleGrid(_))));
    }

    #[test]
    fn step_is_left_continuous() {
        let s = AmplitudeFn::Step { height: 1.0, end: 1.0 };
        let grid = TimeGrid::new(0.0, 2.0, 0.1).unwrap();
        let v = s.sample(&grid);
        assert_eq!(v[10], 1.0);
        assert_eq!(v[11], 0.0);
        assert!(s.vanishes_after(1.0));
        assert!(!AmplitudeFn::Exp { scale: 0.5, rate: 5.0 }.vanishes_after(1.0));
    }

    #[test]
    fn noise_levels() {
        assert_eq!(parse_noise_level("2%").unwrap(), 0.02);
        assert_eq!(parse_noise_level("0.01").unwrap(), 0.01);
        assert!(parse_noise_level("-1").is_err());
    }
}
