//! Deterministic fixtures shared by the benchmarks.

use setvec_core::data::Bag;
use setvec_core::Tensor;

/// Smooth pseudo-random values in `[-1, 1]`.
pub fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.7311 + phase).sin()).collect()
}

pub fn tensor(shape: &[usize], phase: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_f64(shape.to_vec(), &wave(n, phase)).expect("shape matches data")
}

/// Bag of `n` patches of `patch` shape with values in `[0, 1]`.
pub fn bag(n: usize, patch: &[usize]) -> Bag {
    let mut shape = vec![n];
    shape.extend_from_slice(patch);
    let t = tensor(&shape, 0.3).map(|v| 0.5 + 0.5 * v);
    let rel = (0..n).map(|i| i % 3 == 0).collect();
    Bag::new("bench", t, n as f64 / 3.0)
        .expect("non-empty bag")
        .with_relevance(rel)
        .expect("one flag per patch")
}
