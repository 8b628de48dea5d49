//! Per-iteration training metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::difficulty::Bucket;

/// Aggregates for one difficulty bucket in one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketMetrics {
    /// Prompt groups assigned to this bucket.
    pub groups: usize,
    /// Trajectories across those groups.
    pub trajectories: usize,
    pub accuracy: f64,
    pub length: f64,
    pub nhe: f64,
    /// Mean KL over non-window tokens of retained groups; `None` when the
    /// bucket had no retained tokens this iteration.
    pub kl_ctrl: Option<f64>,
    pub kappa: f64,
    pub lambda: f64,
    pub target: Option<f64>,
}

/// One append-only metrics record per iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: u64,
    pub mode: String,
    /// True when the online filter emptied the batch and no update ran.
    pub skipped: bool,
    pub accuracy: f64,
    pub length: f64,
    pub nhe: f64,
    pub tau_high: f64,
    pub kl_ctrl: Option<f64>,
    pub loss: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub filtered_fraction: f64,
    pub buckets: BTreeMap<Bucket, BucketMetrics>,
}
