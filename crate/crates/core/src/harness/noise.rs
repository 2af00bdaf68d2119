use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::forward::BoundaryTrace;

/// Standard normal from two uniform words (Box–Muller, cosine branch).
fn gaussian(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal draws for one time step: stream `step` of the generator
/// keyed by `seed`, one pair of words per boundary node.
pub fn step_normals(seed: u64, step: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    (0..n)
        .map(|_| {
            let a = rng.next_u64();
            gaussian(a, rng.next_u64())
        })
        .collect()
}

/// Adds i.i.d. `N(0, (δ·sup|u|)²)` noise to every boundary sample. The final
/// interior snapshot is left clean.
pub fn make_noisy(trace: &BoundaryTrace, delta: f64, seed: u64) -> BoundaryTrace {
    let mut out = trace.clone();
    if delta == 0.0 {
        return out;
    }
    let std = delta * trace.sup_norm();
    let nb = trace.n_boundary();
    for n in 0..=trace.grid.n_steps {
        let z = step_normals(seed, n, nb);
        for (v, e) in out.row_mut(n).iter_mut().zip(z) {
            *v += std * e;
        }
    }
    out
}
