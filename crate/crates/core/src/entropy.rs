//! Token- and window-level entropy statistics and high-window-entropy (HWE)
//! detection.
//!
//! Window means smooth single-token entropy spikes: position `t` gets the
//! mean of the token entropies over `t..t+w-1`, truncated at the end of the
//! sequence so every token receives a statistic. Thresholds are nearest-rank
//! quantiles of token entropies, averaged across the trajectories of a batch
//! to give a stable cutoff.
//!
//! Detection runs in two modes. `Window` marks every position whose window
//! mean reaches the threshold; this ungated mask drives exploration triggers
//! and KL relaxation, while the *counted* HWE total additionally requires the
//! token to belong to the semantic allowlist. `SingleToken` gates the mask
//! itself on both the raw token entropy and allowlist membership.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Trajectory;

/// Allowlist of token ids treated as reasoning markers when counting HWE tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticVocab {
    allowlist: BTreeSet<u32>,
}

impl SemanticVocab {
    /// Build from explicit ids; must be nonempty and must not contain STOP.
    pub fn new(ids: impl IntoIterator<Item = u32>, stop_token: u32) -> Result<Self> {
        let allowlist: BTreeSet<u32> = ids.into_iter().collect();
        if allowlist.is_empty() {
            return Err(Error::InvalidArgument("semantic allowlist is empty".into()));
        }
        if allowlist.contains(&stop_token) {
            return Err(Error::InvalidArgument(
                "semantic allowlist must exclude the STOP token".into(),
            ));
        }
        Ok(SemanticVocab { allowlist })
    }

    /// Default allowlist for the toy alphabet: every token except STOP.
    pub fn all_but_stop(vocab_size: usize) -> Self {
        let stop = (vocab_size - 1) as u32;
        SemanticVocab {
            allowlist: (0..vocab_size as u32).filter(|&t| t != stop).collect(),
        }
    }

    pub fn contains(&self, token: u32) -> bool {
        self.allowlist.contains(&token)
    }

    pub fn ids(&self) -> impl Iterator<Item = &u32> {
        self.allowlist.iter()
    }
}

/// How HWE positions are marked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HweMode {
    /// Mask on window means; allowlist gates the count only.
    Window,
    /// Mask on raw token entropy AND allowlist membership.
    SingleToken,
}

/// Per-trajectory entropy statistics and HWE detection result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub token_entropies: Vec<f64>,
    pub window_means: Vec<f64>,
    pub window_size: usize,
    /// Trigger mask; see [`HweMode`] for gating semantics.
    pub hwe_mask: Vec<bool>,
    /// Counted HWE tokens (semantically gated).
    pub hwe_count: usize,
}

/// Shannon entropy in nats of an explicit probability vector, with
/// `0 * log 0 = 0`. Entries must be nonnegative and sum to 1 within 1e-9.
pub fn token_entropy(distribution: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in distribution {
        if p < 0.0 || !p.is_finite() {
            return Err(Error::InvalidDistribution(format!("entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
    }
    Ok(crate::policy::entropy_of(distribution))
}

/// Sliding window means with truncated trailing windows.
pub fn window_entropy(entropies: &[f64], w: usize) -> Result<Vec<f64>> {
    if w < 1 {
        return Err(Error::InvalidArgument("window size must be >= 1".into()));
    }
    let n = entropies.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let end = (t + w).min(n);
        let slice = &entropies[t..end];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    Ok(out)
}

/// Nearest-rank quantile: sort ascending and take the entry at index
/// `ceil(q * len) - 1`.
pub fn sequence_threshold(entropies: &[f64], q: f64) -> Result<f64> {
    if entropies.is_empty() {
        return Err(Error::EmptyInput("sequence_threshold".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument("quantile must be in (0, 1)".into()));
    }
    let mut sorted = entropies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Batch-level threshold: mean of per-trajectory nearest-rank quantiles.
pub fn batch_threshold(per_trajectory_entropies: &[&[f64]], q: f64) -> Result<f64> {
    if per_trajectory_entropies.is_empty() {
        return Err(Error::EmptyInput("batch_threshold".into()));
    }
    let mut acc = 0.0;
    for seq in per_trajectory_entropies {
        acc += sequence_threshold(seq, q)?;
    }
    Ok(acc / per_trajectory_entropies.len() as f64)
}

/// Detect HWE positions for a trajectory against threshold `tau`.
pub fn hwe_detect(
    trajectory: &Trajectory,
    tau: f64,
    w: usize,
    vocab: &SemanticVocab,
    mode: HweMode,
) -> Result<EntropyProfile> {
    if tau.is_nan() {
        return Err(Error::InvalidArgument("threshold must be finite".into()));
    }
    hwe_detect_parts(&trajectory.entropies, &trajectory.tokens, tau, w, vocab, mode)
}

/// Detection on raw (entropies, tokens) pairs; used by the JSONL analyzer.
pub fn hwe_detect_parts(
    entropies: &[f64],
    tokens: &[u32],
    tau: f64,
    w: usize,
    vocab: &SemanticVocab,
    mode: HweMode,
) -> Result<EntropyProfile> {
    if entropies.len() != tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} entropies vs {} tokens",
            entropies.len(),
            tokens.len()
        )));
    }
    let window_means = window_entropy(entropies, w)?;
    let n = entropies.len();
    let mut mask = vec![false; n];
    let mut count = 0usize;
    match mode {
        HweMode::Window => {
            for t in 0..n {
                if window_means[t] >= tau {
                    mask[t] = true;
                    if vocab.contains(tokens[t]) {
                        count += 1;
                    }
                }
            }
        }
        HweMode::SingleToken => {
            for t in 0..n {
                if entropies[t] >= tau && vocab.contains(tokens[t]) {
                    mask[t] = true;
                    count += 1;
                }
            }
        }
    }
    Ok(EntropyProfile {
        token_entropies: entropies.to_vec(),
        window_means,
        window_size: w,
        hwe_mask: mask,
        hwe_count: count,
    })
}
