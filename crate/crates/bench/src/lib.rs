//! Deterministic inputs shared by the benchmarks.

use pat_core::acoustics::{make_medium, Medium, VESSEL, WATER};
use pat_core::Tensor;

/// Smooth pseudo-random field; cheap and reproducible without an RNG.
pub fn field(shape: &[usize], phase: f64) -> Tensor {
    Tensor::from_fn(shape, |i| ((i as f64 * 0.618 + phase).sin() * 43.7).fract())
}

/// Water with a vessel-tissue band and a sponge, on a square grid.
pub fn banded_medium(n: usize, dims: usize) -> Medium {
    let ext = vec![n; dims];
    let mask = Tensor::from_fn(&ext, |i| ((i / n) % n > n / 3 && (i / n) % n < n / 2) as u8 as f64);
    make_medium(&ext, 1e-4, WATER, Some(&mask), VESSEL)
        .and_then(|m| m.with_sponge(n / 8, 1e6))
        .expect("valid medium")
}
