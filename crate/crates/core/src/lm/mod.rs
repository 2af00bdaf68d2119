//! Levenberg–Marquardt reconstruction of locations and amplitudes.

mod problem;
mod solver;

pub use problem::{
    apply_jacobian_lambda, apply_jacobian_lambda_adjoint, jacobian_x, residual, ConvolutionLambdaJacobian,
    LambdaJacobian, LmParams, LmProblem, LocationJacobian, PdeLambdaJacobian,
};
pub use solver::{
    lm_step, run_lm, ErrorProbe, IterateRecord, JacobianBackend, Linearization, LmSchedule, ReconstructionResult,
    StepOutcome, StopReason, StopRule,
};
