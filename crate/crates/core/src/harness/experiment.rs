use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::direct::{
    harmonic_moments, prony_recover, recover_amplitude, recover_location_1d, recover_location_single,
    AmplitudeOptions,
};
use crate::error::{Error, Result};
use crate::fem::{Point, SpaceMesh};
use crate::forward::{simulate, BoundaryTrace, TimeGrid};
use crate::lm::{run_lm, IterateRecord, LmParams, LmProblem, StopReason};
use crate::sparse::SolveOptions;

use super::examples::ExampleId;
use super::noise::make_noisy;
use super::rates::{rate_fit, RateFit};
use super::restrict::restrict_trace;
use super::scenario::Scenario;

/// Noise levels of the rate studies, `0.125%` to `2%`.
pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.00125, 0.0025, 0.005, 0.01, 0.02];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lm,
    Direct,
    Both,
}

impl Method {
    /// The single methods this selection runs, in output order.
    pub fn expand(&self) -> Vec<Method> {
        match self {
            Method::Both => vec![Method::Lm, Method::Direct],
            m => vec![*m],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Lm => "lm",
            Method::Direct => "direct",
            Method::Both => "both",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lm" => Ok(Method::Lm),
            "direct" => Ok(Method::Direct),
            "both" => Ok(Method::Both),
            _ => Err(format!("unknown method '{s}' (lm, direct, both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub label: String,
    pub scenario: Scenario,
    pub noise_levels: Vec<f64>,
    /// One run per seed at every noise level.
    pub seeds: Vec<u64>,
    pub method: Method,
}

impl ExperimentSpec {
    /// Seeds `base_seed, base_seed + 1, ...`; `coarsen` multiplies both grids' steps.
    pub fn for_example(
        id: ExampleId,
        noise_levels: &[f64],
        n_runs: usize,
        base_seed: u64,
        method: Method,
        coarsen: f64,
    ) -> Self {
        ExperimentSpec {
            label: id.name().to_string(),
            scenario: id.scenario(coarsen),
            noise_levels: noise_levels.to_vec(),
            seeds: (0..n_runs as u64).map(|i| base_seed + i).collect(),
            method,
        }
    }

    pub fn n_runs(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one run is required".into()));
        }
        if let Some(d) = self.noise_levels.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise level {d} must be nonnegative")));
        }
        Ok(())
    }
}

/// Outcome of one inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub delta: f64,
    pub seed: u64,
    /// Summed distance to the true locations after optimal relabeling.
    pub location_error: Option<f64>,
    /// Summed `L¹(0,T)` amplitude error, same labeling.
    pub amplitude_error: Option<f64>,
    /// `‖λ − λ̂‖ / ‖λ‖` in `L²(0,T)` over all sources.
    pub amplitude_rel_l2: Option<f64>,
    pub locations: Vec<Point>,
    /// Empty when the method recovers no amplitude series.
    pub amplitudes: Vec<Vec<f64>>,
    pub stop_reason: Option<StopReason>,
    pub history: Vec<IterateRecord>,
    pub wall_time: f64,
    pub failure: Option<String>,
}

impl RunRecord {
    fn failed(method: Method, delta: f64, seed: u64, e: &Error, wall_time: f64) -> Self {
        RunRecord {
            method,
            delta,
            seed,
            location_error: None,
            amplitude_error: None,
            amplitude_rel_l2: None,
            locations: Vec::new(),
            amplitudes: Vec::new(),
            stop_reason: None,
            history: Vec::new(),
            wall_time,
            failure: Some(e.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Statistics of one `(method, δ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub method: Method,
    pub delta: f64,
    pub n_runs: usize,
    pub n_ok: usize,
    pub loc_mean: Option<f64>,
    pub loc_stderr: Option<f64>,
    pub amp_mean: Option<f64>,
    pub amp_stderr: Option<f64>,
    pub amp_rel_l2_mean: Option<f64>,
}

impl ErrorRow {
    pub fn complete(&self) -> bool {
        self.n_ok == self.n_runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: Method,
    /// `location` or `amplitude`.
    pub quantity: String,
    pub n_points: usize,
    pub fit: RateFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub spec: ExperimentSpec,
    pub inversion_grid: TimeGrid,
    pub inversion_mesh_size: f64,
    pub truth: LmParams,
    pub approximate_support: bool,
    pub rows: Vec<ErrorRow>,
    pub rates: Vec<RateRow>,
    pub runs: Vec<RunRecord>,
    pub data_wall_time: f64,
}

impl ErrorReport {
    pub fn row(&self, method: Method, delta: f64) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.method == method && r.delta == delta)
    }

    pub fn rate(&self, method: Method, quantity: &str) -> Option<&RateFit> {
        self.rates
            .iter()
            .find(|r| r.method == method && r.quantity == quantity)
            .map(|r| &r.fit)
    }

    pub fn incomplete(&self) -> bool {
        self.rows.iter().any(|r| !r.complete())
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Labeling `π` minimizing `Σ_k |x_k − x̂_{π(k)}|`; ties keep the first found.
pub fn best_relabeling(truth: &[Point], estimate: &[Point]) -> Vec<usize> {
    let cost = |p: &[usize]| -> f64 { truth.iter().zip(p).map(|(x, &j)| x.dist(&estimate[j])).sum() };
    let mut perms = permutations(truth.len());
    perms.sort();
    perms
        .into_iter()
        .fold((f64::INFINITY, Vec::new()), |(bc, bp), p| {
            let c = cost(&p);
            if c < bc {
                (c, p)
            } else {
                (bc, bp)
            }
        })
        .1
}

/// Per-source location errors and summed amplitude errors `(L¹, relative L²)`
/// after relabeling; amplitudes are compared on `grid` when present.
pub fn source_errors(
    truth: &LmParams,
    locations: &[Point],
    amplitudes: &[Vec<f64>],
    grid: &TimeGrid,
) -> (Vec<f64>, Option<(f64, f64)>) {
    let perm = best_relabeling(&truth.locations, locations);
    let loc: Vec<f64> = truth
        .locations
        .iter()
        .zip(&perm)
        .map(|(x, &j)| x.dist(&locations[j]))
        .collect();
    if amplitudes.len() != truth.amplitudes.len() {
        return (loc, None);
    }
    let w = grid.trapezoid_weights();
    let (mut l1, mut d2, mut t2) = (0.0, 0.0, 0.0);
    for (a, &j) in truth.amplitudes.iter().zip(&perm) {
        for ((x, y), wn) in a.iter().zip(&amplitudes[j]).zip(&w) {
            l1 += wn * (x - y).abs();
            d2 += wn * (x - y).powi(2);
            t2 += wn * x * x;
        }
    }
    let rel = if t2 > 0.0 { (d2 / t2).sqrt() } else { d2.sqrt() };
    (loc, Some((l1, rel)))
}

/// Locations and, for a single source, the amplitude from the direct methods.
pub fn direct_reconstruction(
    scenario: &Scenario,
    mesh: &SpaceMesh,
    data: &BoundaryTrace,
    delta: f64,
) -> Result<(Vec<Point>, Vec<Vec<f64>>)> {
    let config = &scenario.config;
    let n = scenario.n_sources();
    if n == 1 {
        let est = if config.effective_reaction() > 0.0 {
            recover_location_single(data, config, mesh)?
        } else if config.dim == 1 {
            recover_location_1d(data, config, mesh)?
        } else {
            let m = harmonic_moments(data, config, mesh, 2)?;
            let node = prony_recover(&m, 1)?[0];
            let p = node.location(&m);
            crate::direct::LocationEstimate {
                point: mesh.clamp_interior(&p, 0.0),
                raw: p,
            }
        };
        // clean data still carry an O(h²) discretization error
        let opts = AmplitudeOptions {
            noise_scale: delta.max(mesh.mesh_size.powi(2)),
            ..AmplitudeOptions::default()
        };
        let amp = recover_amplitude(data, None, &est.point, config, mesh, &opts)?;
        return Ok((vec![est.point], vec![amp.time_samples]));
    }
    if config.dim != 2 || config.effective_reaction().abs() > 1e-12 {
        return Err(Error::IncompatibleProbe(format!(
            "{n} sources need the harmonic moments, which require d = 2 and mu = -|A|^2/4"
        )));
    }
    let m = harmonic_moments(data, config, mesh, 2 * n)?;
    let nodes = prony_recover(&m, n)?;
    Ok((
        nodes.iter().map(|p| mesh.clamp_interior(&p.location(&m), 0.0)).collect(),
        Vec::new(),
    ))
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    fine_mesh: SpaceMesh,
    mesh: SpaceMesh,
    grid: TimeGrid,
    clean: BoundaryTrace,
    truth: LmParams,
}

impl Context<'_> {
    fn record(&self, method: Method, delta: f64, seed: u64, data: &BoundaryTrace) -> RunRecord {
        let start = Instant::now();
        let out = match method {
            Method::Lm => self.lm_run(delta, data),
            _ => self.direct_run(delta, data),
        };
        let wall = start.elapsed().as_secs_f64();
        match out {
            Ok((locations, amplitudes, stop_reason, history)) => {
                let (loc, amp) = source_errors(&self.truth, &locations, &amplitudes, &self.grid);
                RunRecord {
                    method,
                    delta,
                    seed,
                    location_error: Some(loc.iter().sum()),
                    amplitude_error: amp.map(|a| a.0),
                    amplitude_rel_l2: amp.map(|a| a.1),
                    locations,
                    amplitudes,
                    stop_reason,
                    history,
                    wall_time: wall,
                    failure: None,
                }
            }
            Err(e) => RunRecord::failed(method, delta, seed, &e, wall),
        }
    }

    #[allow(clippy::type_complexity)]
    fn lm_run(
        &self,
        delta: f64,
        data: &BoundaryTrace,
    ) -> Result<(Vec<Point>, Vec<Vec<f64>>, Option<StopReason>, Vec<IterateRecord>)> {
        let s = &self.spec.scenario;
        let problem = LmProblem::new(&s.config, &self.mesh, &self.grid, data, SolveOptions::default())?;
        let noise_std = delta * self.clean.sup_norm();
        let schedule = s.lm.schedule(self.mesh.mesh_size, noise_std);
        let probe = |p: &LmParams| {
            let (l, a) = source_errors(&self.truth, &p.locations, &p.amplitudes, &self.grid);
            (l, a.map_or(f64::NAN, |a| a.0))
        };
        let res = run_lm(&problem, &s.init_params(&self.grid), &schedule, Some(&probe))?;
        Ok((
            res.final_params.locations,
            res.final_params.amplitudes,
            Some(res.stop_reason),
            res.history,
        ))
    }

    #[allow(clippy::type_complexity)]
    fn direct_run(
        &self,
        delta: f64,
        data: &BoundaryTrace,
    ) -> Result<(Vec<Point>, Vec<Vec<f64>>, Option<StopReason>, Vec<IterateRecord>)> {
        let (l, a) = direct_reconstruction(&self.spec.scenario, &self.mesh, data, delta)?;
        Ok((l, a, None, Vec::new()))
    }
}

fn mean_stderr(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    (Some(m), Some(se))
}

/// Per-cell statistics of `runs`, in the order of `methods × noise_levels`.
pub fn aggregate(runs: &[RunRecord], methods: &[Method], noise_levels: &[f64], n_runs: usize) -> Vec<ErrorRow> {
    let mut rows = Vec::new();
    for &method in methods {
        for &delta in noise_levels {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method && r.delta == delta).collect();
            let loc: Vec<f64> = cell.iter().filter_map(|r| r.location_error).collect();
            let amp: Vec<f64> = cell.iter().filter_map(|r| r.amplitude_error).collect();
            let rel: Vec<f64> = cell.iter().filter_map(|r| r.amplitude_rel_l2).collect();
            let (loc_mean, loc_stderr) = mean_stderr(&loc);
            let (amp_mean, amp_stderr) = mean_stderr(&amp);
            rows.push(ErrorRow {
                method,
                delta,
                n_runs,
                n_ok: cell.iter().filter(|r| r.ok()).count(),
                loc_mean,
                loc_stderr,
                amp_mean,
                amp_stderr,
                amp_rel_l2_mean: mean_stderr(&rel).0,
            });
        }
    }
    rows
}

/// Log-log slopes of the mean errors over the positive noise levels, where at
/// least three cells have data.
pub fn fit_rates(rows: &[ErrorRow]) -> Vec<RateRow> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut out = Vec::new();
    for method in methods {
        for (quantity, pick) in [
            ("location", (|r: &ErrorRow| r.loc_mean) as fn(&ErrorRow) -> Option<f64>),
            ("amplitude", |r: &ErrorRow| r.amp_mean),
        ] {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method && r.delta > 0.0)
                .filter_map(|r| pick(r).filter(|e| *e > 0.0).map(|e| (r.delta, e)))
                .collect();
            if let Ok(fit) = rate_fit(&pairs) {
                out.push(RateRow {
                    method,
                    quantity: quantity.to_string(),
                    n_points: pairs.len(),
                    fit,
                });
            }
        }
    }
    out
}

/// Generates fine data once, then for every `(δ, seed)` adds noise, restricts to
/// the inversion grid and inverts. Failures are recorded per run.
pub fn run_example(spec: &ExperimentSpec) -> Result<ErrorReport> {
    spec.validate()?;
    let s = &spec.scenario;
    let start = Instant::now();
    let fine_mesh = s.fine_mesh()?;
    let fine_grid = s.fine_grid()?;
    let model = s.truth_model(&fine_grid)?;
    model.validate(&fine_mesh, &s.config, false)?;
    let clean = simulate(&s.config, &fine_mesh, &model, &fine_grid)?;
    let mesh = s.inversion_mesh()?;
    let grid = s.inversion_grid()?;
    let truth = s.truth_params(&grid);
    let ctx = Context {
        spec,
        fine_mesh,
        mesh,
        grid,
        clean,
        truth,
    };
    let data_wall_time = start.elapsed().as_secs_f64();

    let methods = spec.method.expand();
    let jobs: Vec<(f64, u64)> = spec
        .noise_levels
        .iter()
        .flat_map(|&d| spec.seeds.iter().map(move |&seed| (d, seed)))
        .collect();
    let slots: Mutex<Vec<Option<Vec<RunRecord>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(delta, seed)) = jobs.get(i) else { break };
                let noisy = make_noisy(&ctx.clean, delta, seed);
                let recs = match restrict_trace(&noisy, &ctx.fine_mesh, &ctx.mesh, &ctx.grid) {
                    Ok(data) => methods.iter().map(|&m| ctx.record(m, delta, seed, &data)).collect(),
                    Err(e) => methods.iter().map(|&m| RunRecord::failed(m, delta, seed, &e, 0.0)).collect(),
                };
                slots.lock().unwrap()[i] = Some(recs);
            });
        }
    });
    let mut runs: Vec<RunRecord> = slots.into_inner().unwrap().into_iter().flatten().flatten().collect();
    // method-major, then the spec's δ and seed order
    runs.sort_by_key(|r| methods.iter().position(|m| *m == r.method));
    let rows = aggregate(&runs, &methods, &spec.noise_levels, spec.n_runs());
    let rates = fit_rates(&rows);
    Ok(ErrorReport {
        spec: spec.clone(),
        inversion_grid: ctx.grid,
        inversion_mesh_size: ctx.mesh.mesh_size,
        truth: ctx.truth,
        approximate_support: s.approximate_support(),
        rows,
        rates,
        runs,
        data_wall_time,
    })
}
