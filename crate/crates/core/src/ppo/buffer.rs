//! Rollout storage with the recurrent-state snapshots needed to replay
//! truncated-BPTT subsequences.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::env::TradingEnv;
use crate::error::{CoreError, Result};
use crate::policy::{Policy, PolicyState};

/// One rollout of experience, stored columnwise.
///
/// `snapshots[t]` is the recurrent state the policy held *before* acting
/// at step `t`; one exists for every training subsequence start (each
/// episode start and each `seq_len` boundary within an episode), so any
/// subsequence can be replayed without recomputing earlier steps.
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// True where step `t` begins a fresh episode.
    pub episode_starts: Vec<bool>,
    pub snapshots: BTreeMap<usize, PolicyState>,
    /// Critic value for the state after the final step (0 if it was
    /// terminal); bootstraps the advantage recursion.
    pub bootstrap_value: f64,
    seq_len: usize,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Half-open `[start, end)` training subsequences: contiguous, at most
    /// `seq_len` long, never straddling an episode boundary, each starting
    /// at a stored snapshot.
    pub fn subsequences(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = 0;
        for t in 0..self.len() {
            let boundary = t > start
                && (self.episode_starts[t] || (t - start) == self.seq_len);
            if boundary {
                spans.push((start, t));
                start = t;
            }
        }
        if start < self.len() {
            spans.push((start, self.len()));
        }
        debug_assert!(spans
            .iter()
            .all(|(s, _)| self.snapshots.contains_key(s)));
        spans
    }

    /// The stored recurrent state for a subsequence starting at `t`.
    pub fn snapshot(&self, t: usize) -> Result<&PolicyState> {
        self.snapshots.get(&t).ok_or_else(|| {
            CoreError::contract("rollout_buffer", format!("no state snapshot at step {t}"))
        })
    }
}

/// Collects rollouts from an environment, carrying the observation,
/// recurrent state, and episode bookkeeping across calls so a fixed
/// horizon can cut through episode boundaries.
pub struct RolloutCollector {
    last_obs: Vec<f64>,
    last_state: PolicyState,
    at_episode_start: bool,
    /// Running return of the unfinished episode.
    partial_return: f64,
    /// Returns of episodes completed during the most recent collect call.
    completed_returns: Vec<f64>,
}

impl RolloutCollector {
    /// Resets the environment and primes the carry state.
    pub fn new(env: &mut TradingEnv, policy: &Policy) -> Result<Self> {
        let obs = env.reset()?;
        Ok(RolloutCollector {
            last_obs: obs,
            last_state: policy.zero_state(),
            at_episode_start: true,
            partial_return: 0.0,
            completed_returns: Vec::new(),
        })
    }

    /// Episode returns completed during the latest rollout.
    pub fn completed_returns(&self) -> &[f64] {
        &self.completed_returns
    }

    /// Return accumulated so far in the unfinished episode.
    pub fn partial_return(&self) -> f64 {
        self.partial_return
    }

    /// Steps the environment `horizon` times with sampled actions,
    /// restarting episodes (and zeroing the recurrent state) as they end.
    pub fn collect(
        &mut self,
        env: &mut TradingEnv,
        policy: &Policy,
        rng: &mut ChaCha8Rng,
        horizon: usize,
        seq_len: usize,
    ) -> Result<RolloutBuffer> {
        if horizon == 0 {
            return Err(CoreError::contract("collect_rollout", "horizon must be >= 1"));
        }
        if seq_len == 0 {
            return Err(CoreError::contract("collect_rollout", "seq_len must be >= 1"));
        }
        self.completed_returns.clear();

        let mut buffer = RolloutBuffer {
            obs: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            log_probs: Vec::with_capacity(horizon),
            episode_starts: Vec::with_capacity(horizon),
            snapshots: BTreeMap::new(),
            bootstrap_value: 0.0,
            seq_len,
        };

        let mut steps_into_sequence = 0;
        for t in 0..horizon {
            if self.at_episode_start {
                steps_into_sequence = 0;
            }
            if steps_into_sequence == 0 {
                buffer.snapshots.insert(t, self.last_state.clone());
            }

            let sample = policy.act(&self.last_obs, &self.last_state, rng, false)?;
            let result = env.step(&sample.action)?;

            buffer.obs.push(std::mem::take(&mut self.last_obs));
            buffer.actions.push(sample.action);
            buffer.rewards.push(result.reward);
            buffer.dones.push(result.done);
            buffer.values.push(sample.value);
            buffer.log_probs.push(sample.log_prob);
            buffer.episode_starts.push(self.at_episode_start);

            self.partial_return += result.reward;
            if result.done {
                self.completed_returns.push(self.partial_return);
                self.partial_return = 0.0;
                self.last_obs = env.reset()?;
                self.last_state = policy.zero_state();
                self.at_episode_start = true;
            } else {
                self.last_obs = result.obs;
                self.last_state = sample.state;
                self.at_episode_start = false;
            }

            steps_into_sequence += 1;
            if steps_into_sequence == seq_len {
                steps_into_sequence = 0;
            }
        }

        // Value of the carried state bootstraps unfinished episodes; a
        // finished one contributes nothing (masked by its done flag).
        buffer.bootstrap_value = if *buffer.dones.last().expect("horizon >= 1") {
            0.0
        } else {
            policy.act(&self.last_obs, &self.last_state, rng, true)?.value
        };
        Ok(buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_bars, AlignedPanel, SynthConfig, TurbulenceSeries};
    use crate::env::EnvConfig;
    use crate::policy::PolicyConfig;
    use crate::xlstm::{BlockStackConfig, CellKind};
    use rand::SeedableRng;

    fn tiny_setup() -> (AlignedPanel, TurbulenceSeries) {
        let bars = generate_bars(&SynthConfig {
            n_days: 40,
            seed: 3,
            volatility: 0.02,
            ..SynthConfig::default()
        })
        .expect("bars");
        let mut panel = AlignedPanel::align(&[("A".into(), bars)]).expect("align");
        panel.fit_normalization(0, 39).expect("fit");
        let series = TurbulenceSeries::from_panel(&panel, 0, 39, 99.0).expect("series");
        (panel, series)
    }

    fn tiny_policy(obs_dim: usize, rng: &mut ChaCha8Rng) -> Policy {
        let config = PolicyConfig {
            obs_dim,
            n_actions: 1,
            stack: BlockStackConfig {
                embedding_dim: 8,
                layers: vec![CellKind::SLstm],
                n_heads: 1,
                mlp_expansion: 1.0,
                ln_eps: 1e-12,
            },
        };
        Policy::new(config, rng).expect("policy")
    }

    #[test]
    fn buffer_length_equals_horizon_and_replays_bitwise() {
        let (panel, series) = tiny_setup();
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 39), 5).expect("env");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = tiny_policy(env.observation_len(), &mut rng);

        let mut collector = RolloutCollector::new(&mut env, &policy).expect("collector");
        let seq_len = 5;
        let buffer = collector
            .collect(&mut env, &policy, &mut rng, 50, seq_len)
            .expect("rollout");
        assert_eq!(buffer.len(), 50);

        // The very first snapshot is the all-zero state.
        let zero = policy.zero_state();
        let first = buffer.snapshot(0).expect("snapshot");
        let flat = |s: &PolicyState| -> Vec<f64> {
            let mut out = Vec::new();
            for cell in s.actor.iter().chain(s.critic.iter()) {
                out.extend(cell.flatten_values());
            }
            out
        };
        assert_eq!(flat(first), flat(&zero));

        // Replaying every subsequence from its snapshot reproduces the
        // stored log densities and values bit for bit.
        for (start, end) in buffer.subsequences() {
            assert!(end - start <= seq_len);
            let (lp, values, _) = policy
                .evaluate_sequence(
                    buffer.snapshot(start).expect("snapshot"),
                    &buffer.obs[start..end],
                    &buffer.actions[start..end],
                )
                .expect("replay");
            assert_eq!(lp.to_vec(), buffer.log_probs[start..end].to_vec());
            assert_eq!(values.to_vec(), buffer.values[start..end].to_vec());
        }
    }

    #[test]
    fn subsequences_never_straddle_episodes() {
        let (panel, series) = tiny_setup();
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 39), 5).expect("env");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = tiny_policy(env.observation_len(), &mut rng);

        // Episode length is 34; a 80-step horizon spans three episodes.
        assert_eq!(env.episode_len(), 34);
        let mut collector = RolloutCollector::new(&mut env, &policy).expect("collector");
        let buffer = collector
            .collect(&mut env, &policy, &mut rng, 80, 30)
            .expect("rollout");

        let starts: Vec<usize> = buffer
            .episode_starts
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.then_some(t))
            .collect();
        assert_eq!(starts, vec![0, 34, 68]);

        for (start, end) in buffer.subsequences() {
            for t in (start + 1)..end {
                assert!(
                    !buffer.episode_starts[t],
                    "subsequence {start}..{end} crosses an episode start at {t}"
                );
            }
        }

        // Completed-episode accounting: two episodes finished.
        assert_eq!(collector.completed_returns().len(), 2);
        let manual: f64 = buffer.rewards[..34].iter().sum();
        assert_eq!(collector.completed_returns()[0], manual);
    }

    #[test]
    fn degenerate_arguments_are_rejected() {
        let (panel, series) = tiny_setup();
        let mut env =
            TradingEnv::new(EnvConfig::default(), &panel, &series, (0, 39), 5).expect("env");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = tiny_policy(env.observation_len(), &mut rng);
        let mut collector = RolloutCollector::new(&mut env, &policy).expect("collector");
        assert!(collector
            .collect(&mut env, &policy, &mut rng, 0, 5)
            .is_err());
        assert!(collector
            .collect(&mut env, &policy, &mut rng, 5, 0)
            .is_err());
    }
}
