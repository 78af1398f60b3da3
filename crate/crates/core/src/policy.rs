//! Recurrent actor-critic policy with a diagonal-Gaussian action head.
//!
//! Two parameter-disjoint towers of identical shape — feature MLP
//! (obs_dim → embedding, one GeLU hidden layer) feeding a recurrent block
//! stack — end in an action-mean head (actor) and a scalar value head
//! (critic). The action distribution is N(mean, exp(log_std)²) with a
//! state-independent learnable log_std.
//!
//! Log densities are computed twice in the program's life: once at rollout
//! time on plain f64 ([`gaussian_log_prob`]) and once at update time on the
//! graph ([`Policy::evaluate_sequence`]). The two paths perform the same
//! float operations in the same order, so with unchanged parameters they
//! agree bit-for-bit — which is what makes the importance ratio exactly 1
//! on the first optimization pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::special::{HALF_LN_2PI, HALF_LN_2PIE};
use crate::autodiff::{concat, NamedParams, NoGradGuard, Tensor};
use crate::error::{CoreError, Result};
use crate::xlstm::init::{uniform_weight, zero_bias};
use crate::xlstm::{BlockStack, BlockStackConfig, CellState};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub stack: BlockStackConfig,
}

/// Diagonal-Gaussian log density, the rollout-time scalar path.
///
/// Computes Σᵢ [−log_std_i − ½ln(2π) − ½((aᵢ−meanᵢ)/exp(log_std_i))²],
/// associated as (−Σ log_std) − N·½ln(2π) − ½·Σ zᵢ².
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), action.len());
    let mut s = 0.0;
    for &ls in log_std {
        s += ls;
    }
    let mut q = 0.0;
    for i in 0..mean.len() {
        let z = (action[i] - mean[i]) * (-log_std[i]).exp();
        q += z * z;
    }
    (-s) + (-(mean.len() as f64) * HALF_LN_2PI) - 0.5 * q
}

/// One feature-MLP + stack + linear-head tower.
struct Tower {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    stack: BlockStack,
    head_w: Tensor,
    head_b: Tensor,
}

impl Tower {
    fn new(
        obs_dim: usize,
        head_out: usize,
        stack_config: &BlockStackConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tower> {
        let d = stack_config.embedding_dim;
        Ok(Tower {
            w1: uniform_weight(d, obs_dim, rng)?,
            b1: zero_bias(d)?,
            w2: uniform_weight(d, d, rng)?,
            b2: zero_bias(d)?,
            stack: BlockStack::new(stack_config, rng)?,
            head_w: uniform_weight(head_out, d, rng)?,
            head_b: zero_bias(head_out)?,
        })
    }

    fn step(&self, obs: &Tensor, states: &[CellState]) -> Result<(Tensor, Vec<CellState>)> {
        let features = self
            .w2
            .matmul(&self.w1.matmul(obs)?.add(&self.b1)?.gelu()?)?
            .add(&self.b2)?;
        let (y, new_states) = self.stack.step(&features, states)?;
        let out = self.head_w.matmul(&y)?.add(&self.head_b)?;
        Ok((out, new_states))
    }

    fn params(&self, prefix: &str) -> NamedParams {
        let mut out = vec![
            (format!("{prefix}.mlp.w1"), self.w1.clone()),
            (format!("{prefix}.mlp.b1"), self.b1.clone()),
            (format!("{prefix}.mlp.w2"), self.w2.clone()),
            (format!("{prefix}.mlp.b2"), self.b2.clone()),
        ];
        for (name, p) in self.stack.params() {
            out.push((format!("{prefix}.stack.{name}"), p));
        }
        out.push((format!("{prefix}.head.w"), self.head_w.clone()));
        out.push((format!("{prefix}.head.b"), self.head_b.clone()));
        out
    }
}

pub struct Policy {
    config: PolicyConfig,
    actor: Tower,
    log_std: Tensor,
    critic: Tower,
}

/// Recurrent state of both towers. Cloning is cheap (shared buffers).
#[derive(Clone)]
pub struct PolicyState {
    pub actor: Vec<CellState>,
    pub critic: Vec<CellState>,
}

/// One action drawn at rollout time, with everything the update later needs.
pub struct ActionSample {
    /// Unclipped sample; the environment clips to its own action box.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub state: PolicyState,
}

impl Policy {
    pub fn new(config: PolicyConfig, rng: &mut ChaCha8Rng) -> Result<Policy> {
        if config.obs_dim == 0 || config.n_actions == 0 {
            return Err(CoreError::contract(
                "policy",
                format!(
                    "obs_dim {} and n_actions {} must be positive",
                    config.obs_dim, config.n_actions
                ),
            ));
        }
        config.stack.validate()?;
        let actor = Tower::new(config.obs_dim, config.n_actions, &config.stack, rng)?;
        let log_std = Tensor::param(vec![config.n_actions], vec![0.0; config.n_actions])?;
        let critic = Tower::new(config.obs_dim, 1, &config.stack, rng)?;
        Ok(Policy {
            config,
            actor,
            log_std,
            critic,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    pub fn zero_state(&self) -> PolicyState {
        PolicyState {
            actor: self.actor.stack.zero_states(),
            critic: self.critic.stack.zero_states(),
        }
    }

    pub fn params(&self) -> NamedParams {
        let mut out = self.actor.params("actor");
        out.push(("log_std".to_string(), self.log_std.clone()));
        out.extend(self.critic.params("critic"));
        out
    }

    fn check_obs(&self, len: usize) -> Result<()> {
        if len != self.config.obs_dim {
            return Err(CoreError::dim(
                "act",
                format!("observation has {len} entries, policy expects {}", self.config.obs_dim),
            ));
        }
        Ok(())
    }

    /// Draws an action (or returns the mean when `deterministic`), computes
    /// its log density and the critic's value, and advances both towers'
    /// recurrent states. Runs entirely outside the autodiff graph.
    pub fn act(
        &self,
        obs: &[f64],
        state: &PolicyState,
        rng: &mut ChaCha8Rng,
        deterministic: bool,
    ) -> Result<ActionSample> {
        self.check_obs(obs.len())?;
        let _guard = NoGradGuard::new();
        let obs_t = Tensor::vector(obs.to_vec())?;
        let (mean_t, actor_states) = self.actor.step(&obs_t, &state.actor)?;
        let (value_t, critic_states) = self.critic.step(&obs_t, &state.critic)?;
        let mean = mean_t.to_vec();
        let log_std = self.log_std.to_vec();
        let action: Vec<f64> = if deterministic {
            mean.clone()
        } else {
            mean.iter()
                .zip(&log_std)
                .map(|(&m, &ls)| {
                    let zeta: f64 = rng.sample(StandardNormal);
                    m + ls.exp() * zeta
                })
                .collect()
        };
        let log_prob = gaussian_log_prob(&mean, &log_std, &action);
        Ok(ActionSample {
            action,
            log_prob,
            value: value_t.item(),
            state: PolicyState {
                actor: actor_states,
                critic: critic_states,
            },
        })
    }

    /// Replays both towers over a rollout subsequence, on the graph.
    ///
    /// Returns per-step log densities of the stored actions, per-step
    /// values, and the (observation-independent) distribution entropy
    /// Σᵢ(log_std_i + ½ln(2πe)).
    pub fn evaluate_sequence(
        &self,
        init_state: &PolicyState,
        obs_seq: &[Vec<f64>],
        actions: &[Vec<f64>],
    ) -> Result<(Tensor, Tensor, Tensor)> {
        if obs_seq.is_empty() {
            return Err(CoreError::contract(
                "evaluate_sequence",
                "empty sequence".to_string(),
            ));
        }
        if obs_seq.len() != actions.len() {
            return Err(CoreError::contract(
                "evaluate_sequence",
                format!("{} observations vs {} actions", obs_seq.len(), actions.len()),
            ));
        }
        let neg_half_n_ln2pi = -(self.config.n_actions as f64) * HALF_LN_2PI;
        let mut actor_states = init_state.actor.clone();
        let mut critic_states = init_state.critic.clone();
        let mut log_probs = Vec::with_capacity(obs_seq.len());
        let mut values = Vec::with_capacity(obs_seq.len());
        for (obs, action) in obs_seq.iter().zip(actions) {
            self.check_obs(obs.len())?;
            if action.len() != self.config.n_actions {
                return Err(CoreError::dim(
                    "evaluate_sequence",
                    format!(
                        "action has {} entries, policy expects {}",
                        action.len(),
                        self.config.n_actions
                    ),
                ));
            }
            let obs_t = Tensor::vector(obs.clone())?;
            let (mean_t, next_actor) = self.actor.step(&obs_t, &actor_states)?;
            let (value_t, next_critic) = self.critic.step(&obs_t, &critic_states)?;
            actor_states = next_actor;
            critic_states = next_critic;

            // Mirror of gaussian_log_prob, operation for operation.
            let action_t = Tensor::vector(action.clone())?;
            let z = action_t
                .sub(&mean_t)?
                .mul(&self.log_std.neg()?.exp()?)?;
            let q = z.mul(&z)?.sum()?;
            let lp = self
                .log_std
                .sum()?
                .neg()?
                .add_scalar(neg_half_n_ln2pi)?
                .sub(&q.scale(0.5)?)?;
            log_probs.push(lp);
            values.push(value_t);
        }
        let entropy = self
            .log_std
            .sum()?
            .add_scalar(self.config.n_actions as f64 * HALF_LN_2PIE)?;
        Ok((concat(&log_probs)?, concat(&values)?, entropy))
    }
}
