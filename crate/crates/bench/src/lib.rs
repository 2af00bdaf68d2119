//! Shared fixtures for the criterion benchmarks under `benches/`.

use ptsrc_core::fem::SpaceMesh;
use ptsrc_core::forward::{simulate, BoundaryTrace, TimeGrid};
use ptsrc_core::harness::{ExampleId, Scenario};

/// An example scenario on its inversion grid, with noise-free data there.
pub struct Fixture {
    pub scenario: Scenario,
    pub mesh: SpaceMesh,
    pub grid: TimeGrid,
    pub data: BoundaryTrace,
}

impl Fixture {
    pub fn new(id: ExampleId, coarsen: f64) -> Self {
        let scenario = id.scenario(coarsen);
        let mesh = scenario.inversion_mesh().expect("example mesh");
        let grid = scenario.inversion_grid().expect("example grid");
        let model = scenario.truth_model(&grid).expect("example sources");
        let data = simulate(&scenario.config, &mesh, &model, &grid).expect("forward solve");
        Fixture {
            scenario,
            mesh,
            grid,
            data,
        }
    }
}
