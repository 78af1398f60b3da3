//! Recurrent proximal policy optimization: GAE advantage estimation,
//! rollout storage with hidden-state snapshots for truncated BPTT, the
//! clipped surrogate loss, and the training loop itself.

mod advantage;
mod buffer;
mod loss;
mod trainer;

pub use advantage::{compute_advantages, normalize_advantages};
pub use buffer::{RolloutBuffer, RolloutCollector};
pub use loss::{ppo_loss, LossStats};
pub use trainer::{evaluate_policy, write_update_log, TrainConfig, Trainer, UpdateStats};
