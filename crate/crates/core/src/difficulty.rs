//! Online difficulty estimation from group rollouts.
//!
//! Each prompt is rolled out G times; the pass count over the group assigns
//! the prompt to an easy/medium/hard bucket. With G = 8 the fractional
//! thresholds reproduce the count thresholds >=6 easy, 3..5 medium, <=2 hard.
//! Per-bucket running state (HWE target, shaping multiplier, KL weights and
//! dual) is updated once per iteration at the batch barrier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Trajectory;

/// Difficulty bucket from group pass rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

    pub fn name(&self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Medium => "medium",
            Bucket::Hard => "hard",
        }
    }
}

/// G rollouts for one prompt, with the group pass count and bucket.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt_id: u64,
    pub trajectories: Vec<Trajectory>,
    pub pass_count: usize,
    pub bucket: Bucket,
}

impl RolloutGroup {
    pub fn new(prompt_id: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        let pass = pass_count(&trajectories);
        let bucket = assign_bucket(pass, trajectories.len())?;
        Ok(RolloutGroup {
            prompt_id,
            trajectories,
            pass_count: pass,
            bucket,
        })
    }

    pub fn group_size(&self) -> usize {
        self.trajectories.len()
    }
}

/// Number of correct trajectories in a group.
pub fn pass_count(trajectories: &[Trajectory]) -> usize {
    trajectories.iter().filter(|t| t.accuracy).count()
}

/// Bucket from the pass fraction f = pass_count / g: easy when f >= 0.75,
/// hard when f <= 0.25, medium otherwise.
pub fn assign_bucket(pass_count: usize, g: usize) -> Result<Bucket> {
    if g == 0 {
        return Err(Error::EmptyInput("assign_bucket over empty group".into()));
    }
    if pass_count > g {
        return Err(Error::InvalidArgument(format!(
            "pass_count {pass_count} exceeds group size {g}"
        )));
    }
    let f = pass_count as f64 / g as f64;
    if f >= 0.75 {
        Ok(Bucket::Easy)
    } else if f <= 0.25 {
        Ok(Bucket::Hard)
    } else {
        Ok(Bucket::Medium)
    }
}

/// Running per-bucket quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketParams {
    /// EMA target for the counted HWE tokens; `None` until first observed.
    pub hwe_target: Option<f64>,
    /// Closed-form shaping multiplier computed from the latest batch.
    pub lambda: f64,
    /// Base KL weight.
    pub kl_base: f64,
    /// KL dual multiplier, kept within the configured clamp range.
    pub kl_dual: f64,
    /// KL budget the dual drives the non-window KL toward.
    pub kl_budget: f64,
}

/// Per-bucket state plus the shared EMA decay and dual clamp range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketState {
    pub per_bucket: BTreeMap<Bucket, BucketParams>,
    pub ema_decay: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl BucketState {
    pub fn new(
        ema_decay: f64,
        kl_base: f64,
        kappa_init: f64,
        kappa_min: f64,
        kappa_max: f64,
        budgets: &BTreeMap<Bucket, f64>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_decay) {
            return Err(Error::InvalidArgument("ema_decay must be in [0, 1)".into()));
        }
        if !(kappa_min > 0.0 && kappa_max >= kappa_min) {
            return Err(Error::InvalidArgument("bad kappa clamp range".into()));
        }
        let mut per_bucket = BTreeMap::new();
        for b in Bucket::ALL {
            let budget = *budgets
                .get(&b)
                .ok_or_else(|| Error::InvalidArgument(format!("missing budget for {}", b.name())))?;
            if !(budget > 0.0) {
                return Err(Error::InvalidArgument("kl budget must be positive".into()));
            }
            per_bucket.insert(
                b,
                BucketParams {
                    hwe_target: None,
                    lambda: 0.0,
                    kl_base,
                    kl_dual: kappa_init.clamp(kappa_min, kappa_max),
                    kl_budget: budget,
                },
            );
        }
        Ok(BucketState {
            per_bucket,
            ema_decay,
            kappa_min,
            kappa_max,
        })
    }

    pub fn get(&self, bucket: Bucket) -> &BucketParams {
        &self.per_bucket[&bucket]
    }

    pub fn get_mut(&mut self, bucket: Bucket) -> &mut BucketParams {
        self.per_bucket.get_mut(&bucket).expect("all buckets present")
    }

    /// EMA update of the per-bucket HWE targets from the batch means.
    /// Buckets absent from the batch keep their target; a bucket seen for the
    /// first time adopts the batch mean directly.
    pub fn update_targets(&mut self, batch_means: &BTreeMap<Bucket, f64>) {
        let decay = self.ema_decay;
        for (&bucket, &mean) in batch_means {
            let params = self.get_mut(bucket);
            params.hwe_target = Some(match params.hwe_target {
                Some(old) => decay * old + (1.0 - decay) * mean,
                None => mean,
            });
        }
    }
}
