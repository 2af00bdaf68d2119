use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fem::{InitialCondition, Point, ProblemConfig};
use crate::lm::JacobianBackend;

use super::scenario::{AmplitudeFn, LmSettings, Resolution, Scenario, SourceSpec};

/// Built-in benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleId {
    Ex1i,
    Ex1ii,
    Ex2i,
    Ex2ii,
    Ex3,
    Ex4,
    /// Two sources with `μ = 0`, `A = 0`, where the harmonic moments apply.
    Direct2d,
}

impl ExampleId {
    pub const ALL: [ExampleId; 7] = [
        ExampleId::Ex1i,
        ExampleId::Ex1ii,
        ExampleId::Ex2i,
        ExampleId::Ex2ii,
        ExampleId::Ex3,
        ExampleId::Ex4,
        ExampleId::Direct2d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExampleId::Ex1i => "ex1i",
            ExampleId::Ex1ii => "ex1ii",
            ExampleId::Ex2i => "ex2i",
            ExampleId::Ex2ii => "ex2ii",
            ExampleId::Ex3 => "ex3",
            ExampleId::Ex4 => "ex4",
            ExampleId::Direct2d => "direct2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ExampleId::Ex1i | ExampleId::Ex1ii => 1,
            _ => 2,
        }
    }

    /// Scenario at the reference grids with both step sizes multiplied by `coarsen`
    /// (1 for the reference runs, 2 for quarter-resolution smoke runs in 2D).
    pub fn scenario(&self, coarsen: f64) -> Scenario {
        use AmplitudeFn::{Exp, Step, Zero};
        let dim = self.dim();
        let at = |x: f64, y: f64| if dim == 1 { Point::new1(x) } else { Point::new2(x, y) };
        let src = |p: Point, a: AmplitudeFn| SourceSpec { location: p, amplitude: a };
        let decay = Exp { scale: 0.5, rate: 5.0 };
        let decay_init = Exp { scale: 0.4, rate: 5.0 };
        let unit = Step { height: 1.0, end: 1.0 };
        let (sources, init) = match self {
            ExampleId::Ex1i | ExampleId::Ex2i => (vec![src(at(0.5, 0.5), decay)], vec![src(at(0.4, 0.4), decay_init)]),
            ExampleId::Ex1ii | ExampleId::Ex2ii => (vec![src(at(0.5, 0.5), unit)], vec![src(at(0.0, 0.0), Zero)]),
            ExampleId::Ex3 | ExampleId::Direct2d => (
                vec![
                    src(at(0.25, 0.25), decay),
                    src(at(0.75, 0.75), Exp { scale: 0.25, rate: 4.0 }),
                ],
                vec![
                    src(at(0.2, 0.2), decay_init),
                    src(at(0.8, 0.8), Exp { scale: 0.2, rate: 4.0 }),
                ],
            ),
            ExampleId::Ex4 => (
                vec![
                    src(at(0.25, 0.25), Step { height: 1.0, end: 2.0 / 3.0 }),
                    src(at(0.75, 0.75), Step { height: 1.0, end: 4.0 / 3.0 }),
                ],
                vec![
                    src(at(0.0, 0.0), Zero),
                    src(at(0.0, 0.0), AmplitudeFn::Const { value: 1.0 }),
                ],
            ),
        };
        let reaction = if *self == ExampleId::Direct2d { 0.0 } else { 1.0 };
        // the second jump of ex4 sits at 4/3, so the support ends there
        let support_end = if *self == ExampleId::Ex4 { 4.0 / 3.0 } else { 1.0 };
        let (fine, inv) = if dim == 1 { (1e-3, 4e-3) } else { (5e-3, 2e-2) };
        let beta_lambda0 = match self {
            ExampleId::Ex1i => 5.0,
            ExampleId::Ex1ii => 2.0,
            _ => 50.0,
        };
        Scenario {
            config: ProblemConfig {
                dim,
                domain_length: 1.0,
                advection: vec![0.0; dim],
                reaction,
                horizon: 2.0,
                support_end,
                obs_start: 1.5,
                initial_condition: InitialCondition::Zero,
            },
            sources,
            init,
            fine: Resolution { dt: fine, dx: fine }.scaled(coarsen),
            inversion: Resolution { dt: inv, dx: inv }.scaled(coarsen),
            lm: LmSettings {
                beta_x0: 1.0,
                beta_lambda0,
                gamma_x: 0.8,
                gamma_lambda: 0.8,
                max_iters: 100,
                eta: 1.1,
                backend: JacobianBackend::Convolution,
            },
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExampleId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown example '{s}'"))
    }
}
