//! P1 finite elements on uniform intervals and squares.

mod assembly;
mod mesh;
mod model;

pub use assembly::{
    assemble_operators, boundary_quadrature, evaluate_field, point_source_load, BoundaryQuadrature,
    Operators,
};
pub use mesh::{build_interval_mesh, build_square_mesh, BoundaryEdge, QuadPoint, SpaceMesh};
pub use model::{InitialCondition, Point, ProblemConfig, SourceModel};
