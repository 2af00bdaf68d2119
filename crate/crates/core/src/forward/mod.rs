//! Backward Euler propagation, boundary traces and analytic references.

mod oracle;
mod propagator;
mod trace;

pub use oracle::{freespace_kernel, spectral_reference, spectral_trace};
pub use propagator::{extend_in_time, simulate, simulate_full, Propagator, SparseLoad};
pub use trace::{BoundaryTrace, TimeGrid};
