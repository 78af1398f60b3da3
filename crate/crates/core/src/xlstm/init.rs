//! Parameter initialization helpers. All draws come from the caller's
//! seeded generator, in declaration order, so construction is reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::Result;

/// Weight matrix with entries uniform in ±1/sqrt(fan_in).
pub(crate) fn uniform_weight(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::param(vec![rows, cols], values)
}

/// Bias vector initialized to zero.
pub(crate) fn zero_bias(len: usize) -> Result<Tensor> {
    Tensor::param(vec![len], vec![0.0; len])
}
