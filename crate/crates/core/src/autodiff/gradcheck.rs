//! Central-difference verification of reverse-mode gradients.

use crate::autodiff::tensor::{backward, NoGradGuard, Tensor};
use crate::error::{CoreError, Result};

/// Compares analytic gradients of `f` against central differences.
///
/// `f` must be a pure function of the given parameter tensors (shared
/// handles; the checker perturbs them in place and restores them). Returns
/// the worst error over all coordinates,
/// `|analytic - numeric| / max(1, |analytic|)`,
/// i.e. relative where the gradient is large and absolute where it is small.
pub fn gradient_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(CoreError::domain(
            "gradient_check",
            format!("step must be positive, got {h}"),
        ));
    }
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    if !loss.is_scalar() {
        return Err(CoreError::contract(
            "gradient_check",
            format!("f must return a scalar, got shape {:?}", loss.shape()),
        ));
    }
    backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    drop(loss); // free the graph before mutating parameter values

    let mut worst = 0.0f64;
    {
        let _guard = NoGradGuard::new();
        for (pi, p) in params.iter().enumerate() {
            let original = p.to_vec();
            let mut bumped = original.clone();
            for ci in 0..original.len() {
                bumped[ci] = original[ci] + h;
                p.set_values(&bumped)?;
                let plus = f()?.item();
                bumped[ci] = original[ci] - h;
                p.set_values(&bumped)?;
                let minus = f()?.item();
                bumped[ci] = original[ci];
                p.set_values(&original)?;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[pi][ci];
                let err = (a - numeric).abs() / a.abs().max(1.0);
                if err > worst {
                    worst = err;
                }
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(worst)
}
