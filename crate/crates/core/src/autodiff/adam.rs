//! Adam optimizer with bias correction, plus global gradient-norm clipping.

use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> AdamConfig {
        AdamConfig {
            alpha,
            ..AdamConfig::default()
        }
    }
}

/// First/second-moment estimates for a fixed, ordered parameter list.
/// Moments are keyed by position, so the same parameter slice (same order,
/// same shapes) must be passed to every step.
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> AdamState {
        AdamState {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// A parameter with no gradient is treated as having gradient zero
    /// (its moments still decay). Gradients are left in place; the caller
    /// zeroes them.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(CoreError::contract(
                "adam_step",
                format!("state tracks {} params, got {}", self.m.len(), params.len()),
            ));
        }
        self.t += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bias2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let mut updated = Vec::new();
        for (idx, p) in params.iter().enumerate() {
            if p.len() != self.m[idx].len() {
                return Err(CoreError::contract(
                    "adam_step",
                    format!(
                        "param {idx} has {} values, state expects {}",
                        p.len(),
                        self.m[idx].len()
                    ),
                ));
            }
            let grad = p.grad();
            let g = grad.as_deref().unwrap_or(&[]);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            updated.clear();
            updated.reserve(p.len());
            let values = p.to_vec();
            for i in 0..values.len() {
                let gi = if g.is_empty() { 0.0 } else { g[i] };
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                updated.push(values[i] - alpha * m_hat / (v_hat.sqrt() + eps));
            }
            p.set_values(&updated)?;
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params {
        if let Some(g) = p.grad() {
            sq += g.iter().map(|&x| x * x).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for p in params {
            p.scale_grad(factor);
        }
    }
    norm
}
