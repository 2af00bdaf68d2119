use crate::error::{Error, Result};
use crate::fem::{Point, SpaceMesh};
use crate::forward::{BoundaryTrace, TimeGrid};

/// Restricts a trace recorded on a fine mesh and grid to nested coarse ones by
/// picking the coincident nodes and every `dt_coarse/dt_fine`-th step.
pub fn restrict_trace(
    trace: &BoundaryTrace,
    fine: &SpaceMesh,
    coarse: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<BoundaryTrace> {
    trace.check_shape()?;
    let r = grid.dt / trace.grid.dt;
    let stride = r.round();
    if stride < 1.0 || (r - stride).abs() > 1e-8 * r || (grid.t0 - trace.grid.t0).abs() > 1e-12 {
        return Err(Error::IncompatibleGrid(format!(
            "time grid {grid:?} is not a subsampling of {:?}",
            trace.grid
        )));
    }
    let stride = stride as usize;
    if grid.n_steps * stride > trace.grid.n_steps {
        return Err(Error::IncompatibleGrid("coarse grid extends past the data".into()));
    }
    let fine_node = |p: &Point| {
        fine.node_at(p)
            .ok_or_else(|| Error::IncompatibleGrid(format!("coarse node {:?} is not a fine node", p.coords(fine.dim))))
    };
    let pos = fine.boundary_position();
    let cols = coarse
        .boundary_nodes
        .iter()
        .map(|&n| {
            let f = fine_node(&coarse.node_coords[n])?;
            pos[f].ok_or_else(|| Error::IncompatibleGrid("boundary node maps into the interior".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity((grid.n_steps + 1) * cols.len());
    for n in 0..=grid.n_steps {
        let row = trace.row(n * stride);
        values.extend(cols.iter().map(|&c| row[c]));
    }
    let final_snapshot = if trace.final_snapshot.is_empty() {
        Vec::new()
    } else {
        // the snapshot belongs to the last fine step, which is the last coarse one only if the grids end together
        if grid.n_steps * stride != trace.grid.n_steps {
            return Err(Error::IncompatibleGrid("grids end at different times".into()));
        }
        coarse
            .node_coords
            .iter()
            .map(|p| fine_node(p).map(|f| trace.final_snapshot[f]))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(BoundaryTrace {
        grid: *grid,
        boundary_index: coarse.boundary_nodes.clone(),
        values,
        final_snapshot,
        field: None,
    })
}
