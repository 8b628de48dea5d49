//! Desk-scale laboratory for entropy-guided policy optimization.
//!
//! The crate trains a tabular-softmax autoregressive policy on synthetic
//! verifiable tasks with three coupled mechanisms: window-entropy exploration
//! triggers, difficulty-aware hierarchical reward shaping, and a clipped
//! surrogate update with token-adaptive KL weights driven toward per-bucket
//! budgets by a multiplicative dual controller (AEPO), alongside GRPO and
//! DAPO baseline modes. A cold-start curator selects logged responses whose
//! lengths match pass-rate-interpolated targets, and a theory module
//! numerically validates the supporting variance, renewal, and KL-budget
//! results. Everything is exact or enumerable at this scale, so gradients are
//! checked against finite differences and estimators against closed forms.

pub mod config;
pub mod curator;
pub mod difficulty;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod report;
pub mod reward;
pub mod seeds;
pub mod task;
pub mod theory;
pub mod train;

pub use config::{ExperimentConfig, Mode};
pub use difficulty::{assign_bucket, pass_count, Bucket, BucketState, RolloutGroup};
pub use entropy::{
    batch_threshold, hwe_detect, sequence_threshold, token_entropy, window_entropy,
    EntropyProfile, HweMode, SemanticVocab,
};
pub use error::{Error, Result};
pub use metrics::{BucketMetrics, MetricRecord};
pub use optim::{
    grpo_advantage, group_centered_token_advantage, kl_controller_update, kl_weights,
    surrogate_loss, token_entropy_bonus, token_kl, train_step, TrainState,
};
pub use policy::{
    branch_rollouts, exact_policy_gradient, sample_rollout, GradientTable, PolicyTable,
    SamplingParams, Trajectory, TrajectoryRecord,
};
pub use reward::{
    deviation, hierarchical_reward, lagrange_multiplier, online_filter, RewardMode, ScoredGroup,
    ShapedReward,
};
pub use task::{make_task, TaskInstance};
pub use theory::TwoStateProcess;
pub use train::run_train;
