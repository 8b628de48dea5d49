//! Difficulty-aware hierarchical reward shaping.
//!
//! The total reward couples a binary accuracy term with an entropy deviation
//! penalty whose direction depends on the difficulty bucket: easy buckets
//! penalize over-exploration (too many HWE tokens), hard buckets penalize
//! under-exploration, medium buckets penalize deviation in either direction.
//! The multiplier is a closed-form Lagrange step computed from batch
//! statistics, so the shaping strength requires no tuned learning rate.
//!
//! Two modes are exposed. `Canonical` applies the shaping only to incorrect
//! responses, so a correct answer is never discouraged. `Encourage` keeps
//! that behavior except on hard prompts, where exploration above target earns
//! a positive term regardless of correctness.

use serde::{Deserialize, Serialize};

use crate::difficulty::{Bucket, RolloutGroup};
use crate::error::{Error, Result};

/// Shaping behavior for the entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Canonical,
    Encourage,
}

/// Fully decomposed shaped reward for one trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapedReward {
    pub accuracy_reward: f64,
    pub deviation: f64,
    pub shaping: f64,
    pub multiplier: f64,
    pub entropy_term: f64,
    pub total: f64,
    pub mode: RewardMode,
}

/// Deviation of a response's counted HWE tokens from the bucket target.
pub fn deviation(n_he: usize, target: f64) -> f64 {
    n_he as f64 - target
}

/// Bucket-directional magnitude of a deviation.
pub fn shaping_direction(delta: f64, bucket: Bucket) -> f64 {
    match bucket {
        Bucket::Easy => delta.max(0.0),
        Bucket::Medium => delta.abs(),
        Bucket::Hard => (-delta).max(0.0),
    }
}

/// Closed-form multiplier from batch statistics:
/// `max(0, (mean - target) / (var + eps))`.
pub fn lagrange_multiplier(
    batch_mean_nhe: f64,
    target: f64,
    batch_var_nhe: f64,
    eps: f64,
) -> Result<f64> {
    if batch_var_nhe < 0.0 {
        return Err(Error::InvalidArgument("variance must be nonnegative".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    Ok(((batch_mean_nhe - target) / (batch_var_nhe + eps)).max(0.0))
}

/// Combine accuracy and entropy shaping into the total reward.
pub fn hierarchical_reward(
    accuracy: bool,
    delta: f64,
    bucket: Bucket,
    lambda: f64,
    mode: RewardMode,
) -> Result<ShapedReward> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let acc = if accuracy { 1.0 } else { 0.0 };
    let shaping = shaping_direction(delta, bucket);
    let entropy_term = match (mode, bucket) {
        (RewardMode::Encourage, Bucket::Hard) => lambda * delta.max(0.0),
        _ => {
            if accuracy {
                0.0
            } else {
                -lambda * shaping
            }
        }
    };
    Ok(ShapedReward {
        accuracy_reward: acc,
        deviation: delta,
        shaping,
        multiplier: lambda,
        entropy_term,
        total: acc + entropy_term,
        mode,
    })
}

/// A rollout group with the shaped reward of each trajectory.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    pub group: RolloutGroup,
    pub rewards: Vec<ShapedReward>,
}

impl ScoredGroup {
    pub fn mean_total(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().map(|r| r.total).sum::<f64>() / self.rewards.len() as f64
    }
}

/// Retain groups whose mean total reward lies in `[lo, hi]`; groups outside
/// the band carry no usable learning signal (all-solved or all-failed).
pub fn online_filter(groups: Vec<ScoredGroup>, lo: f64, hi: f64) -> Result<(Vec<ScoredGroup>, usize)> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument("filter bounds must satisfy lo < hi".into()));
    }
    let total = groups.len();
    let retained: Vec<ScoredGroup> = groups
        .into_iter()
        .filter(|g| {
            let m = g.mean_total();
            m >= lo && m <= hi
        })
        .collect();
    let dropped = total - retained.len();
    Ok((retained, dropped))
}
