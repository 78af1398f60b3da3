//! The clipped-surrogate objective with value regression and an entropy
//! bonus, built on the autodiff graph.

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};

/// Scalar diagnostics of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose importance ratio left `[1-eps, 1+eps]`.
    pub clip_fraction: f64,
}

/// Builds the PPO loss over one minibatch:
/// `-mean(min(rho * A, clip(rho, 1-eps, 1+eps) * A))
///  + value_coef * mean((v - returns)^2) - entropy_coef * entropy`,
/// with `rho = exp(log_prob_new - log_prob_old)`.
///
/// `new_log_probs` and `values` come from the policy graph (replayed
/// subsequences, concatenated); the advantage/return/old-log-prob slices
/// are rollout constants. Advantages are expected already normalized.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    new_log_probs: &Tensor,
    values: &Tensor,
    entropy: &Tensor,
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    clip_range: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(Tensor, LossStats)> {
    let batch = old_log_probs.len();
    if new_log_probs.len() != batch || values.len() != batch {
        return Err(CoreError::dim(
            "ppo_loss",
            format!(
                "graph outputs {}/{} vs stored batch {batch}",
                new_log_probs.len(),
                values.len()
            ),
        ));
    }
    if advantages.len() != batch || returns.len() != batch {
        return Err(CoreError::dim(
            "ppo_loss",
            format!(
                "advantages {} / returns {} vs batch {batch}",
                advantages.len(),
                returns.len()
            ),
        ));
    }
    if batch == 0 {
        return Err(CoreError::contract("ppo_loss", "empty minibatch"));
    }
    if !(clip_range.is_finite() && clip_range > 0.0) {
        return Err(CoreError::contract(
            "ppo_loss",
            format!("clip range must be positive, got {clip_range}"),
        ));
    }

    let old = Tensor::vector(old_log_probs.to_vec())?;
    let adv = Tensor::vector(advantages.to_vec())?;
    let ret = Tensor::vector(returns.to_vec())?;

    // exp() validates its output, so a diverged ratio surfaces here as a
    // numeric error; the trainer logs it and skips the update.
    let ratio = new_log_probs.sub(&old)?.exp()?;
    let unclipped = ratio.mul(&adv)?;
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range)?.mul(&adv)?;
    let surrogate = unclipped.minimum(&clipped)?.mean()?;
    let policy_loss = surrogate.neg()?;

    let residual = values.sub(&ret)?;
    let value_loss = residual.mul(&residual)?.mean()?;

    let loss = policy_loss
        .add(&value_loss.scale(value_coef)?)?
        .sub(&entropy.scale(entropy_coef)?)?;

    let clipped_count = ratio
        .to_vec()
        .iter()
        .filter(|r| (**r - 1.0).abs() > clip_range)
        .count();
    let stats = LossStats {
        policy_loss: policy_loss.item(),
        value_loss: value_loss.item(),
        entropy: entropy.item(),
        clip_fraction: clipped_count as f64 / batch as f64,
    };
    Ok((loss, stats))
}
