//! Generalized advantage estimation and per-update normalization.

use crate::error::{CoreError, Result};

/// Computes advantages and value targets over one rollout.
///
/// GAE recursion, walked backward with episode masking:
/// `delta_t = r_t + gamma * (1 - done_t) * v_{t+1} - v_t`,
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`,
/// where `v_{t+1}` past the horizon is `bootstrap_value`. With
/// `lambda = 0` the advantage reduces to the one-step expression
/// `r_t + gamma * v_{t+1} - v_t` exactly (same float operations).
/// Returns `(advantages, returns)` with `returns_t = A_t + v_t`.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = rewards.len();
    if values.len() != len || dones.len() != len {
        return Err(CoreError::dim(
            "compute_advantages",
            format!(
                "rewards {len} / values {} / dones {}",
                values.len(),
                dones.len()
            ),
        ));
    }
    if len == 0 {
        return Err(CoreError::contract("compute_advantages", "empty rollout"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CoreError::contract(
            "compute_advantages",
            format!("gamma must be in (0, 1], got {gamma}"),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::contract(
            "compute_advantages",
            format!("lambda must be in [0, 1], got {lambda}"),
        ));
    }
    if !bootstrap_value.is_finite() {
        return Err(CoreError::contract(
            "compute_advantages",
            "bootstrap value must be finite",
        ));
    }

    let mut advantages = vec![0.0; len];
    let mut next_value = bootstrap_value;
    let mut carried = 0.0;
    for t in (0..len).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * mask * next_value - values[t];
        carried = delta + gamma * lambda * mask * carried;
        advantages[t] = carried;
        next_value = values[t];
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

/// Returns a normalized copy: `(a - mean) / (std + 1e-8)` with the
/// population standard deviation. The epsilon keeps a degenerate batch
/// (constant advantages) finite instead of dividing by zero.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    if advantages.is_empty() {
        return Vec::new();
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    advantages.iter().map(|a| (a - mean) / denom).collect()
}
