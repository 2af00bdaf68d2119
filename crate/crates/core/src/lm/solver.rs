use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm, SolveMethod, SolveOptions};

use super::problem::{LambdaJacobian, LmParams, LmProblem, LocationJacobian};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StopRule {
    MaxIters,
    /// Stop once `|r| ≤ eta · noise_std · noise_scale`.
    Discrepancy { eta: f64, noise_std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianBackend {
    /// Impulse responses convolved with the amplitudes.
    #[default]
    Convolution,
    /// Forward and adjoint PDE solves per application.
    Pde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmSchedule {
    pub beta_x0: f64,
    pub beta_lambda0: f64,
    pub gamma_x: f64,
    pub gamma_lambda: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub gn_solver: SolveOptions,
    pub stop_rule: StopRule,
    pub backend: JacobianBackend,
}

impl LmSchedule {
    /// Discrepancy stopping with `η = 1.1`, 100 iterations and `h_fd = h/4`.
    pub fn new(beta_x0: f64, beta_lambda0: f64, gamma: (f64, f64), mesh_size: f64, noise_std: f64) -> Self {
        LmSchedule {
            beta_x0,
            beta_lambda0,
            gamma_x: gamma.0,
            gamma_lambda: gamma.1,
            max_iters: 100,
            fd_step: 0.25 * mesh_size,
            gn_solver: SolveOptions {
                method: SolveMethod::Cg,
                rel_tol: 1e-10,
                max_iter: 5000,
            },
            stop_rule: StopRule::Discrepancy { eta: 1.1, noise_std },
            backend: JacobianBackend::Convolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.beta_x0 > 0.0 && self.beta_lambda0 > 0.0) {
            return bad("regularization weights must be positive");
        }
        if !(self.gamma_x > 0.0 && self.gamma_x < 1.0 && self.gamma_lambda > 0.0 && self.gamma_lambda < 1.0) {
            return bad("decay factors must lie in (0, 1)");
        }
        if !(self.fd_step > 0.0) {
            return bad("finite-difference step must be positive");
        }
        if let StopRule::Discrepancy { eta, noise_std } = self.stop_rule {
            if !(eta > 0.0) || !(noise_std >= 0.0) {
                return bad("discrepancy rule needs eta > 0 and noise_std >= 0");
            }
        }
        self.gn_solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Discrepancy,
    /// The step still increased the residual after doubling the weights.
    ResidualIncrease,
    /// The normal equations did not converge after doubling the weights.
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub residual: f64,
    /// Distance to the true location per source, when the truth is known.
    pub location_errors: Vec<f64>,
    /// Summed `L¹(0,T)` amplitude error, when the truth is known.
    pub amplitude_error: Option<f64>,
    pub beta_x: f64,
    pub beta_lambda: f64,
    /// Whether the accepted step needed the doubled weights.
    pub retried: bool,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub final_params: LmParams,
    pub history: Vec<IterateRecord>,
    pub stop_reason: StopReason,
    pub wall_time: f64,
    /// Message of the failure that ended the run, if any.
    pub diagnostics: Option<String>,
}

impl ReconstructionResult {
    /// `iteration,residual,loc_err_<k>...,amp_err,beta_x,beta_lambda` rows.
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.final_params.n_sources();
        write!(w, "iteration,residual")?;
        for k in 0..n {
            write!(w, ",loc_err_{k}")?;
        }
        writeln!(w, ",amp_err,beta_x,beta_lambda")?;
        for rec in &self.history {
            write!(w, "{},{:e}", rec.iteration, rec.residual)?;
            for k in 0..n {
                match rec.location_errors.get(k) {
                    Some(e) => write!(w, ",{e:e}")?,
                    None => write!(w, ",")?,
                }
            }
            match rec.amplitude_error {
                Some(e) => write!(w, ",{e:e}")?,
                None => write!(w, ",")?,
            }
            writeln!(w, ",{:e},{:e}", rec.beta_x, rec.beta_lambda)?;
        }
        Ok(())
    }
}

/// Linearization of the residual map at fixed parameters.
pub struct Linearization<'j> {
    pub jx: LocationJacobian,
    pub jl: Box<dyn LambdaJacobian + 'j>,
    pub residual: Vec<f64>,
}

impl<'j> Linearization<'j> {
    pub fn new<'m>(problem: &'j LmProblem<'m>, params: &LmParams, schedule: &LmSchedule) -> Result<Self> {
        let residual = problem.residual(params)?;
        let jx = problem.jacobian_x(params, schedule.fd_step)?;
        let jl: Box<dyn LambdaJacobian + 'j> = match schedule.backend {
            JacobianBackend::Convolution => Box::new(problem.convolution_lambda_jacobian(&params.locations)?),
            JacobianBackend::Pde => Box::new(problem.pde_lambda_jacobian(&params.locations)?),
        };
        Ok(Linearization { jx, jl, residual })
    }
}

fn split(y: &[f64], nx: usize, n_src: usize, len: usize) -> (&[f64], Vec<Vec<f64>>) {
    let (dx, rest) = y.split_at(nx);
    (dx, (0..n_src).map(|k| rest[k * len..(k + 1) * len].to_vec()).collect())
}

/// Result of one linearized solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: LmParams,
    pub cg_iterations: usize,
}

/// Minimizes `|r + J_x dx + J_λ dλ|² + β_x |dx|² + β_λ ‖dλ‖²_{L²(0,T)}` by
/// Jacobi-preconditioned CG on the normal equations, then clamps the locations.
pub fn lm_step(
    problem: &LmProblem,
    lin: &Linearization,
    params: &LmParams,
    beta_x: f64,
    beta_lambda: f64,
    schedule: &LmSchedule,
) -> Result<StepOutcome> {
    if !(beta_x > 0.0 && beta_lambda > 0.0) {
        return Err(Error::InvalidConfig("regularization weights must be positive".into()));
    }
    let n_src = params.n_sources();
    let nx = lin.jx.columns.len();
    let len = problem.grid().n_steps + 1;
    let w = problem.grid().trapezoid_weights();
    let jt = |v: &[f64]| -> Result<Vec<f64>> {
        let mut out: Vec<f64> = lin.jx.columns.iter().map(|c| dot(c, v)).collect();
        for g in lin.jl.apply_adjoint(v)? {
            out.extend(g);
        }
        Ok(out)
    };
    let apply = |y: &[f64]| -> Result<Vec<f64>> {
        let (dx, dl) = split(y, nx, n_src, len);
        let mut jy = lin.jl.apply(&dl)?;
        for (c, a) in lin.jx.columns.iter().zip(dx) {
            axpy(*a, c, &mut jy);
        }
        let mut out = jt(&jy)?;
        for (o, a) in out.iter_mut().zip(dx) {
            *o += beta_x * a;
        }
        for k in 0..n_src {
            for (j, wj) in w.iter().enumerate() {
                out[nx + k * len + j] += beta_lambda * wj * y[nx + k * len + j];
            }
        }
        Ok(out)
    };
    let rhs: Vec<f64> = jt(&lin.residual)?.into_iter().map(|v| -v).collect();
    let mut diag: Vec<f64> = lin.jx.columns.iter().map(|c| dot(c, c) + beta_x).collect();
    let gram = lin.jl.gram_diagonal();
    for k in 0..n_src {
        for (j, wj) in w.iter().enumerate() {
            let g = gram.as_ref().map_or(0.0, |g| g[k][j]);
            diag.push(g + beta_lambda * wj);
        }
    }
    let (y, iters) = pcg(apply, &rhs, &diag, &schedule.gn_solver)?;
    let (dx, dl) = split(&y, nx, n_src, len);
    let dim = problem.mesh().dim;
    let mut next = params.clone();
    for (k, p) in next.locations.iter_mut().enumerate() {
        for a in 0..dim {
            p[a] += dx[k * dim + a];
        }
    }
    for (a, d) in next.amplitudes.iter_mut().zip(&dl) {
        for (v, dv) in a.iter_mut().zip(d) {
            *v += dv;
        }
    }
    next.clamp(problem.mesh());
    Ok(StepOutcome {
        params: next,
        cg_iterations: iters,
    })
}

/// Jacobi-preconditioned conjugate gradients for a matrix-free SPD operator.
pub(crate) fn pcg<F>(apply: F, b: &[f64], diag: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let target = opts.rel_tol * bnorm;
    for it in 1..=opts.max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotConverged {
                iterations: it,
                residual: norm(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rn = norm(&r);
        if rn <= target {
            return Ok((x, it));
        }
        z = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: norm(&r) / bnorm,
    })
}

/// Error of an iterate against known sources, minimized over relabelings.
pub type ErrorProbe<'a> = &'a dyn Fn(&LmParams) -> (Vec<f64>, f64);

/// Levenberg–Marquardt iteration with geometric decay of the weights.
pub fn run_lm(
    problem: &LmProblem,
    init: &LmParams,
    schedule: &LmSchedule,
    errors: Option<ErrorProbe>,
) -> Result<ReconstructionResult> {
    schedule.validate()?;
    init.check(problem.grid())?;
    let start = Instant::now();
    let mut params = init.clone();
    params.clamp(problem.mesh());
    let (mut bx, mut bl) = (schedule.beta_x0, schedule.beta_lambda0);
    let record = |it: usize, res: f64, p: &LmParams, bx: f64, bl: f64, retried: bool, cg: usize| {
        let (location_errors, amp) = match errors {
            Some(f) => {
                let (l, a) = f(p);
                (l, Some(a))
            }
            None => (Vec::new(), None),
        };
        IterateRecord {
            iteration: it,
            residual: res,
            location_errors,
            amplitude_error: amp,
            beta_x: bx,
            beta_lambda: bl,
            retried,
            cg_iterations: cg,
        }
    };
    let threshold = match schedule.stop_rule {
        StopRule::MaxIters => None,
        StopRule::Discrepancy { eta, noise_std } => Some(eta * noise_std * problem.noise_scale()),
    };
    let mut lin = Linearization::new(problem, &params, schedule)?;
    let mut res = norm(&lin.residual);
    let mut history = vec![record(0, res, &params, bx, bl, false, 0)];
    let mut stop_reason = StopReason::MaxIters;
    let mut diagnostics = None;
    for it in 1..=schedule.max_iters {
        if threshold.is_some_and(|t| res <= t) {
            stop_reason = StopReason::Discrepancy;
            break;
        }
        let mut accepted = None;
        let mut failure = (StopReason::SolverFailure, String::new());
        for (attempt, factor) in [1.0, 2.0].into_iter().enumerate() {
            let outcome = match lm_step(problem, &lin, &params, factor * bx, factor * bl, schedule) {
                Ok(o) => o,
                Err(e) if e.is_numerical() => {
                    failure = (StopReason::SolverFailure, e.to_string());
                    continue;
                }
                Err(e) => return Err(e),
            };
            let candidate = Linearization::new(problem, &outcome.params, schedule)?;
            let new_res = norm(&candidate.residual);
            if new_res <= res {
                accepted = Some((outcome, candidate, new_res, attempt > 0));
                break;
            }
            failure = (
                StopReason::ResidualIncrease,
                format!("residual rose from {res:e} to {new_res:e}"),
            );
        }
        let Some((outcome, candidate, new_res, retried)) = accepted else {
            stop_reason = failure.0;
            diagnostics = Some(failure.1);
            break;
        };
        params = outcome.params;
        lin = candidate;
        res = new_res;
        bx *= schedule.gamma_x;
        bl *= schedule.gamma_lambda;
        history.push(record(it, res, &params, bx, bl, retried, outcome.cg_iterations));
    }
    if stop_reason == StopReason::MaxIters && threshold.is_some_and(|t| res <= t) {
        stop_reason = StopReason::Discrepancy;
    }
    Ok(ReconstructionResult {
        final_params: params,
        history,
        stop_reason,
        wall_time: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}
