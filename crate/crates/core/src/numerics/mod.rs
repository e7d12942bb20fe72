//! Small dense kernels shared by the pipeline.
//!
//! Storage is `f32`; every reduction (dot products, row sums, norms) is
//! accumulated in `f64` and rounded once on store.

mod matrix;
mod rng;
mod select;

pub use matrix::{l2_normalize_rows, matmul_transposed, row_softmax, Matrix};
pub use rng::{uniform_vector, Rng};
pub use select::{bottom_k_indices, minmax_scale, top_k_indices, ScoreVector};

/// `floor(ratio * n)` tolerant to the representation error of decimal ratios
/// (`0.7 * 30.0` is `20.999999999999996` in binary floating point).
pub fn floor_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    (x + 1e-9 * x.abs().max(1.0)).floor().max(0.0) as usize
}

/// `ceil(ratio * n)`, tolerant in the same way as [`floor_count`].
pub fn ceil_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize
}
