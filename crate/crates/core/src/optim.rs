//! The AEPO update with GRPO and DAPO baseline modes.
//!
//! One training step runs eight phases: rollouts (with branch-at-trigger),
//! batch thresholding, difficulty bucketing, reward shaping, advantage
//! computation, per-token KL against the frozen reference, the clipped
//! surrogate update, and the KL dual-controller step. Rollout generation is
//! the parallel read-only phase; everything after the batch barrier is a
//! single-writer reduction in fixed index order so results never depend on
//! scheduling.
//!
//! The surrogate objective per group is
//!
//!   -(1/G) sum_i (1/L_i) sum_t min(r_it * A_it, clip(r_it, 1-el, 1+eh) * A_it)
//!   + kappa_d * (1/G) sum_i (1/L_i) sum_t beta_it * kld_it
//!
//! with ratios taken against the frozen old policy and exact categorical KL
//! against the reference policy. Advantages are treated as constants; clipped
//! tokens contribute no gradient through the ratio.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::difficulty::{assign_bucket, pass_count, Bucket, BucketState, RolloutGroup};
use crate::entropy::{batch_threshold, hwe_detect, window_entropy, EntropyProfile, SemanticVocab};
use crate::error::{Error, Result};
use crate::metrics::{BucketMetrics, MetricRecord};
use crate::policy::{
    branch_rollouts, sample_rollout, GradientTable, PolicyTable, SamplingParams, Trajectory,
};
use crate::reward::{
    deviation, hierarchical_reward, lagrange_multiplier, online_filter, RewardMode, ScoredGroup,
    ShapedReward,
};
use crate::seeds;
use crate::task::TaskInstance;

/// Group-relative normalized advantages: `(r_i - mean) / (std + eps)` with
/// the population standard deviation.
pub fn grpo_advantage(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::InvalidArgument(
            "group-relative advantages need at least 2 rewards".into(),
        ));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps)).collect())
}

/// Group-centered token advantages: each token of trajectory `i` receives
/// `(R_i - mean(R)) / L_i`.
pub fn group_centered_token_advantage(
    rewards: &[f64],
    lengths: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if rewards.len() != lengths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rewards vs {} lengths",
            rewards.len(),
            lengths.len()
        )));
    }
    if lengths.iter().any(|&l| l == 0) {
        return Err(Error::InvalidArgument("trajectory lengths must be positive".into()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards
        .iter()
        .zip(lengths)
        .map(|(&r, &l)| vec![(r - mean) / l as f64; l])
        .collect())
}

/// Token-level entropy bonus for one group:
/// `psi_it = lambda * max(0, window_mean - tau) * mask - b`, with the
/// baseline `b` equal to the group mean of the first term so the bonus sums
/// to zero over the group.
pub fn token_entropy_bonus(
    profiles: &[&EntropyProfile],
    tau: f64,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let mut first_terms: Vec<Vec<f64>> = Vec::with_capacity(profiles.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in profiles {
        let terms: Vec<f64> = p
            .window_means
            .iter()
            .zip(&p.hwe_mask)
            .map(|(&wm, &m)| {
                if m {
                    lambda * (wm - tau).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        sum += terms.iter().sum::<f64>();
        count += terms.len();
        first_terms.push(terms);
    }
    let baseline = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(first_terms
        .into_iter()
        .map(|terms| terms.into_iter().map(|v| v - baseline).collect())
        .collect())
}

/// Exact per-step categorical KL between the live policy and the frozen
/// reference at every visited state.
pub fn token_kl(policy: &PolicyTable, trajectory: &Trajectory) -> Vec<f64> {
    let contexts = policy.step_contexts(&trajectory.prompt, &trajectory.tokens);
    contexts
        .iter()
        .map(|&ctx| {
            let p = policy.probs(ctx);
            let q = policy.probs_ref(ctx);
            let mut kl = 0.0;
            for (pj, qj) in p.iter().zip(&q) {
                if *pj > 0.0 {
                    kl += pj * (pj / qj).ln();
                }
            }
            kl.max(0.0)
        })
        .collect()
}

/// Token-adaptive KL weights: `beta_d * rho` inside flagged windows, `beta_d`
/// elsewhere.
pub fn kl_weights(mask: &[bool], beta_d: f64, rho: f64) -> Result<Vec<f64>> {
    if !(beta_d > 0.0) {
        return Err(Error::InvalidArgument("beta_d must be positive".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument("rho must be in (0, 1]".into()));
    }
    Ok(mask
        .iter()
        .map(|&m| if m { beta_d * rho } else { beta_d })
        .collect())
}

/// Multiplicative dual-ascent step driving the control KL toward the budget.
pub fn kl_controller_update(
    kappa: f64,
    kl_ctrl: f64,
    delta: f64,
    alpha: f64,
    kappa_min: f64,
    kappa_max: f64,
) -> f64 {
    (kappa * (1.0 + alpha * (kl_ctrl / delta - 1.0))).clamp(kappa_min, kappa_max)
}

/// How token losses are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossAggregation {
    /// Mean over tokens within each trajectory, then mean over the group.
    PerSequence,
    /// Mean over all tokens of the group.
    TokenLevel,
}

/// Inputs for one group's contribution to the surrogate.
pub struct SurrogateGroup<'a> {
    pub trajectories: &'a [Trajectory],
    /// Shaped per-token advantages, one vector per trajectory.
    pub advantages: &'a [Vec<f64>],
    /// Per-token KL weights; `None` disables the KL term for this group.
    pub kl_weights: Option<&'a [Vec<f64>]>,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, Copy)]
pub struct SurrogateSettings {
    pub eps_low: f64,
    pub eps_high: f64,
    pub aggregation: LossAggregation,
}

/// Scalar loss plus its exact gradient and bookkeeping for metrics.
pub struct SurrogateOutput {
    pub loss: f64,
    pub gradient: GradientTable,
    pub clip_fraction: f64,
    pub actor_term: f64,
    pub kl_term: f64,
}

/// Clipped-surrogate loss and exact gradient over a batch of groups.
pub fn surrogate_loss(
    policy: &PolicyTable,
    groups: &[SurrogateGroup<'_>],
    settings: &SurrogateSettings,
    kappas: &BTreeMap<Bucket, f64>,
) -> Result<SurrogateOutput> {
    if groups.is_empty() {
        return Err(Error::EmptyInput("surrogate_loss over empty batch".into()));
    }
    let n_groups = groups.len() as f64;
    let vocab = policy.vocab_size();
    let mut gradient = GradientTable::new();
    let mut scratch = vec![0.0; vocab];
    let mut actor_total = 0.0;
    let mut kl_total = 0.0;
    let mut clipped_tokens = 0usize;
    let mut total_tokens = 0usize;

    for group in groups {
        let g = group.trajectories.len();
        if g == 0 {
            return Err(Error::EmptyInput("empty group".into()));
        }
        if group.advantages.len() != g {
            return Err(Error::ShapeMismatch("advantages per trajectory".into()));
        }
        if let Some(kw) = group.kl_weights {
            if kw.len() != g {
                return Err(Error::ShapeMismatch("kl weights per trajectory".into()));
            }
        }
        let token_sum: usize = group.trajectories.iter().map(|t| t.len()).sum();
        let kappa = *kappas.get(&group.bucket).unwrap_or(&1.0);

        for (i, traj) in group.trajectories.iter().enumerate() {
            let adv = &group.advantages[i];
            if adv.len() != traj.len() {
                return Err(Error::ShapeMismatch(format!(
                    "advantage length {} vs trajectory length {}",
                    adv.len(),
                    traj.len()
                )));
            }
            let weights = group.kl_weights.map(|kw| &kw[i]);
            if let Some(w) = weights {
                if w.len() != traj.len() {
                    return Err(Error::ShapeMismatch("kl weight length".into()));
                }
            }
            let contexts = policy.step_contexts(&traj.prompt, &traj.tokens);
            let actor_w = match settings.aggregation {
                LossAggregation::PerSequence => 1.0 / (n_groups * g as f64 * traj.len() as f64),
                LossAggregation::TokenLevel => 1.0 / (n_groups * token_sum as f64),
            };
            // The KL term always uses the per-sequence pooling of the objective.
            let kl_w = 1.0 / (n_groups * g as f64 * traj.len() as f64);

            for (t, &ctx) in contexts.iter().enumerate() {
                total_tokens += 1;
                let tok = traj.tokens[t] as usize;
                let p = policy.probs(ctx);
                let p_old = policy.probs_old(ctx);
                let ratio = p[tok] / p_old[tok];
                let a = adv[t];
                let unclipped = ratio * a;
                let clipped = ratio.clamp(1.0 - settings.eps_low, 1.0 + settings.eps_high) * a;
                let takes_unclipped = unclipped <= clipped;
                actor_total -= actor_w * unclipped.min(clipped);
                if takes_unclipped {
                    // d(-min)/dz = -w * a * ratio * (onehot - p)
                    let coeff = -actor_w * a * ratio;
                    if coeff != 0.0 {
                        for j in 0..vocab {
                            scratch[j] = -p[j];
                        }
                        scratch[tok] += 1.0;
                        gradient.accumulate(ctx, &scratch, coeff);
                    }
                } else {
                    clipped_tokens += 1;
                }

                if let Some(w) = weights {
                    let q = policy.probs_ref(ctx);
                    let mut kl = 0.0;
                    for (pj, qj) in p.iter().zip(&q) {
                        if *pj > 0.0 {
                            kl += pj * (pj / qj).ln();
                        }
                    }
                    let kl = kl.max(0.0);
                    let coeff = kappa * w[t] * kl_w;
                    kl_total += coeff * kl;
                    // dKL/dz_j = p_j * (log(p_j / q_j) - KL)
                    for j in 0..vocab {
                        scratch[j] = p[j] * ((p[j] / q[j]).ln() - kl);
                    }
                    gradient.accumulate(ctx, &scratch, coeff);
                }
            }
        }
    }

    Ok(SurrogateOutput {
        loss: actor_total + kl_total,
        gradient,
        clip_fraction: if total_tokens == 0 {
            0.0
        } else {
            clipped_tokens as f64 / total_tokens as f64
        },
        actor_term: actor_total,
        kl_term: kl_total,
    })
}

/// Mutable training state threaded through iterations and checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub policy: PolicyTable,
    pub buckets: BucketState,
    /// Batch threshold from the previous iteration; branch triggers use it.
    pub tau_high: Option<f64>,
    pub iter: u64,
    pub root_seed: u64,
    pub topp_fallbacks: u64,
}

impl TrainState {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut policy = PolicyTable::new(config.vocab_size, config.context_order);
        policy.freeze_reference();
        policy.refresh_old();
        let buckets = BucketState::new(
            config.ema_decay,
            config.beta_kl,
            config.kappa_init,
            config.kappa_min,
            config.kappa_max,
            &config.budgets(),
        )?;
        Ok(TrainState {
            policy,
            buckets,
            tau_high: None,
            iter: 0,
            root_seed: config.seed,
            topp_fallbacks: 0,
        })
    }

    pub fn semantic_vocab(&self, config: &ExperimentConfig) -> Result<SemanticVocab> {
        if config.semantic_allowlist.is_empty() {
            Ok(SemanticVocab::all_but_stop(config.vocab_size))
        } else {
            SemanticVocab::new(
                config.semantic_allowlist.iter().copied(),
                (config.vocab_size - 1) as u32,
            )
        }
    }
}

/// Rollouts for one prompt: the advantage group plus any probe branches kept
/// out of it.
struct PromptRollouts {
    prompt_id: u64,
    group: Vec<Trajectory>,
    probes: Vec<Trajectory>,
}

fn rollout_prompt(
    policy: &PolicyTable,
    task: &TaskInstance,
    config: &ExperimentConfig,
    tau_prev: Option<f64>,
    prompt_seed: u64,
) -> Result<PromptRollouts> {
    let params = SamplingParams {
        max_len: config.max_len,
        temperature: config.temperature,
        top_p: config.top_p,
    };
    let mut group = Vec::with_capacity(config.group_size);
    for i in 0..config.group_size {
        group.push(sample_rollout(policy, task, &params, seeds::derive(prompt_seed, i as u64))?);
    }
    let mut branches = Vec::new();
    if let Some(tau) = tau_prev {
        if config.branch_factor > 0 && config.max_branch_points > 0 {
            for parent in &group {
                if parent.is_empty() {
                    continue;
                }
                let means = window_entropy(&parent.entropies, config.window)?;
                let triggers: Vec<usize> = means
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m >= tau)
                    .map(|(t, _)| t)
                    .take(config.max_branch_points)
                    .collect();
                if !triggers.is_empty() {
                    branches.extend(branch_rollouts(
                        policy,
                        task,
                        parent,
                        &triggers,
                        config.branch_factor,
                        &params,
                    )?);
                }
            }
        }
    }
    let (group, probes) = if config.branch_join_group {
        let mut g = group;
        g.extend(branches);
        (g, Vec::new())
    } else {
        (group, branches)
    };
    Ok(PromptRollouts {
        prompt_id: prompt_seed,
        group,
        probes,
    })
}

struct BucketBatchStats {
    mean: f64,
    var: f64,
}

fn bucket_stats(values: &[f64]) -> BucketBatchStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    BucketBatchStats { mean, var }
}

/// Run one full training iteration over a batch of prompts.
pub fn train_step(
    state: &mut TrainState,
    config: &ExperimentConfig,
    tasks: &[TaskInstance],
) -> Result<MetricRecord> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("train_step batch".into()));
    }
    let vocab = state.semantic_vocab(config)?;
    let iter_seed = seeds::derive(state.root_seed, state.iter);
    state.policy.refresh_old();

    // Phase 1: read-only rollouts, parallel across prompts with pre-derived
    // seeds; collected in index order.
    let policy = &state.policy;
    let tau_prev = state.tau_high;
    let rollouts: Vec<PromptRollouts> = tasks
        .par_iter()
        .enumerate()
        .map(|(slot, task)| {
            rollout_prompt(policy, task, config, tau_prev, seeds::derive(iter_seed, slot as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    state.topp_fallbacks += rollouts
        .iter()
        .flat_map(|r| r.group.iter().chain(r.probes.iter()))
        .map(|t| t.topp_fallbacks as u64)
        .sum::<u64>();

    // Phase 2: batch threshold over every sampled trajectory (probes included).
    let all_entropy_refs: Vec<&[f64]> = rollouts
        .iter()
        .flat_map(|r| r.group.iter().chain(r.probes.iter()))
        .filter(|t| !t.is_empty())
        .map(|t| t.entropies.as_slice())
        .collect();
    let tau = batch_threshold(&all_entropy_refs, config.quantile)?;

    // Phase 3: groups, buckets, HWE profiles.
    let mut groups: Vec<RolloutGroup> = Vec::with_capacity(rollouts.len());
    let mut profiles: Vec<Vec<EntropyProfile>> = Vec::with_capacity(rollouts.len());
    for r in &rollouts {
        let pass = pass_count(&r.group);
        let bucket = assign_bucket(pass, r.group.len())?;
        let profs = r
            .group
            .iter()
            .map(|t| hwe_detect(t, tau, config.window, &vocab, config.hwe_mode))
            .collect::<Result<Vec<_>>>()?;
        profiles.push(profs);
        groups.push(RolloutGroup {
            prompt_id: r.prompt_id,
            trajectories: r.group.clone(),
            pass_count: pass,
            bucket,
        });
    }

    // Per-bucket batch statistics of the counted HWE tokens.
    let mut nhe_by_bucket: BTreeMap<Bucket, Vec<f64>> = BTreeMap::new();
    for (g, profs) in groups.iter().zip(&profiles) {
        let entry = nhe_by_bucket.entry(g.bucket).or_default();
        entry.extend(profs.iter().map(|p| p.hwe_count as f64));
    }

    // Shaping multipliers against the prior EMA target, then roll the target.
    let shaping_on = config.mode == Mode::Aepo;
    let mut batch_means: BTreeMap<Bucket, f64> = BTreeMap::new();
    for (&bucket, values) in &nhe_by_bucket {
        let stats = bucket_stats(values);
        batch_means.insert(bucket, stats.mean);
        let lambda = match (shaping_on, state.buckets.get(bucket).hwe_target) {
            (true, Some(target)) => {
                lagrange_multiplier(stats.mean, target, stats.var, config.lambda_eps)?
            }
            _ => 0.0,
        };
        state.buckets.get_mut(bucket).lambda = lambda;
    }

    // Phase 4: shaped rewards. Baseline modes use the bare accuracy reward.
    let mut scored: Vec<ScoredGroup> = Vec::with_capacity(groups.len());
    for (g, profs) in groups.iter().zip(&profiles) {
        let params = state.buckets.get(g.bucket);
        let target = params.hwe_target.unwrap_or_else(|| batch_means[&g.bucket]);
        let lambda = params.lambda;
        let rewards: Vec<ShapedReward> = g
            .trajectories
            .iter()
            .zip(profs)
            .map(|(t, p)| {
                let delta = deviation(p.hwe_count, target);
                if shaping_on {
                    hierarchical_reward(t.accuracy, delta, g.bucket, lambda, config.reward_mode)
                } else {
                    hierarchical_reward(t.accuracy, delta, g.bucket, 0.0, RewardMode::Canonical)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        scored.push(ScoredGroup {
            group: g.clone(),
            rewards,
        });
    }
    state.buckets.update_targets(&batch_means);

    // Metrics over the full pre-filter batch.
    let mut record = batch_metrics(state, config, &groups, &profiles, tau);

    // Phase 5: online filter.
    let total_groups = scored.len();
    let (retained, dropped) = online_filter(scored, config.filter_low, config.filter_high)?;
    record.filtered_fraction = dropped as f64 / total_groups as f64;

    if retained.is_empty() {
        record.skipped = true;
        state.tau_high = Some(tau);
        state.iter += 1;
        return Ok(record);
    }

    // Phase 6: advantages and KL weights for retained groups. Profiles were
    // computed pre-filter; look them up by prompt id.
    let profile_map: BTreeMap<u64, &Vec<EntropyProfile>> = groups
        .iter()
        .zip(&profiles)
        .map(|(g, p)| (g.prompt_id, p))
        .collect();
    let retained_profiles: Vec<&Vec<EntropyProfile>> = retained
        .iter()
        .map(|sg| profile_map[&sg.group.prompt_id])
        .collect();

    let mut advantages: Vec<Vec<Vec<f64>>> = Vec::with_capacity(retained.len());
    let mut weights: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(retained.len());
    for (sg, profs) in retained.iter().zip(&retained_profiles) {
        let totals: Vec<f64> = sg.rewards.iter().map(|r| r.total).collect();
        let lengths: Vec<usize> = sg.group.trajectories.iter().map(|t| t.len()).collect();
        let adv = match config.mode {
            Mode::Aepo => {
                let mut adv = group_centered_token_advantage(&totals, &lengths)?;
                let lambda = state.buckets.get(sg.group.bucket).lambda;
                let prof_refs: Vec<&EntropyProfile> = profs.iter().collect();
                let psi = token_entropy_bonus(&prof_refs, tau, lambda)?;
                for (a, p) in adv.iter_mut().zip(&psi) {
                    for (av, pv) in a.iter_mut().zip(p) {
                        *av += pv;
                    }
                }
                adv
            }
            Mode::Grpo | Mode::Dapo => {
                let seq = grpo_advantage(&totals, config.advantage_eps)?;
                seq.iter()
                    .zip(&lengths)
                    .map(|(&a, &l)| vec![a; l])
                    .collect()
            }
        };
        advantages.push(adv);
        let w = match config.mode {
            Mode::Aepo => {
                let beta = state.buckets.get(sg.group.bucket).kl_base;
                Some(
                    profs
                        .iter()
                        .map(|p| kl_weights(&p.hwe_mask, beta, config.rho))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            Mode::Grpo => Some(
                profs
                    .iter()
                    .map(|p| vec![config.beta_kl; p.hwe_mask.len()])
                    .collect(),
            ),
            Mode::Dapo => None,
        };
        weights.push(w);
    }

    // Control KL (pre-update, non-window tokens only), pooled per bucket.
    let mut kl_sums: BTreeMap<Bucket, (f64, usize)> = BTreeMap::new();
    let mut kl_global = (0.0, 0usize);
    for (sg, profs) in retained.iter().zip(&retained_profiles) {
        for (t, p) in sg.group.trajectories.iter().zip(profs.iter()) {
            let kd = token_kl(&state.policy, t);
            for (v, &m) in kd.iter().zip(&p.hwe_mask) {
                if !m {
                    let e = kl_sums.entry(sg.group.bucket).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                    kl_global.0 += v;
                    kl_global.1 += 1;
                }
            }
        }
    }

    // Phase 7: actor update.
    let settings = SurrogateSettings {
        eps_low: config.eps_low,
        eps_high: match config.mode {
            Mode::Grpo => config.eps_low, // symmetric clip in GRPO mode
            _ => config.eps_high,
        },
        aggregation: match config.mode {
            Mode::Dapo => LossAggregation::TokenLevel,
            _ => LossAggregation::PerSequence,
        },
    };
    let kappas: BTreeMap<Bucket, f64> = Bucket::ALL
        .iter()
        .map(|&b| {
            let k = match config.mode {
                Mode::Aepo => state.buckets.get(b).kl_dual,
                _ => 1.0,
            };
            (b, k)
        })
        .collect();
    let surrogate_groups: Vec<SurrogateGroup<'_>> = retained
        .iter()
        .zip(&advantages)
        .zip(&weights)
        .map(|((sg, adv), w)| SurrogateGroup {
            trajectories: &sg.group.trajectories,
            advantages: adv,
            kl_weights: w.as_deref(),
            bucket: sg.group.bucket,
        })
        .collect();
    let out = surrogate_loss(&state.policy, &surrogate_groups, &settings, &kappas)?;
    state.policy.apply_gradient(&out.gradient, -config.learning_rate);

    // Phase 8: dual controller on buckets seen this iteration (AEPO only).
    for (&bucket, &(sum, n)) in &kl_sums {
        if n == 0 {
            continue;
        }
        let kl_ctrl = sum / n as f64;
        if let Some(bm) = record.buckets.get_mut(&bucket) {
            bm.kl_ctrl = Some(kl_ctrl);
        }
        if config.mode == Mode::Aepo {
            let (kmin, kmax) = (state.buckets.kappa_min, state.buckets.kappa_max);
            let params = state.buckets.get_mut(bucket);
            params.kl_dual = kl_controller_update(
                params.kl_dual,
                kl_ctrl,
                params.kl_budget,
                config.alpha_kappa,
                kmin,
                kmax,
            );
        }
    }
    // Refresh reported duals after the controller step.
    for (&bucket, bm) in record.buckets.iter_mut() {
        bm.kappa = state.buckets.get(bucket).kl_dual;
    }
    record.kl_ctrl = if kl_global.1 == 0 {
        None
    } else {
        Some(kl_global.0 / kl_global.1 as f64)
    };
    record.loss = Some(out.loss);
    record.clip_fraction = Some(out.clip_fraction);

    state.tau_high = Some(tau);
    state.iter += 1;
    Ok(record)
}

fn batch_metrics(
    state: &TrainState,
    config: &ExperimentConfig,
    groups: &[RolloutGroup],
    profiles: &[Vec<EntropyProfile>],
    tau: f64,
) -> MetricRecord {
    let mut acc_sum = 0.0;
    let mut len_sum = 0.0;
    let mut nhe_sum = 0.0;
    let mut count = 0usize;
    let mut per_bucket: BTreeMap<Bucket, (usize, usize, f64, f64, f64)> = BTreeMap::new();
    for (g, profs) in groups.iter().zip(profiles) {
        let e = per_bucket.entry(g.bucket).or_insert((0, 0, 0.0, 0.0, 0.0));
        e.0 += 1;
        for (t, p) in g.trajectories.iter().zip(profs) {
            let acc = t.accuracy_reward();
            let len = t.len() as f64;
            let nhe = p.hwe_count as f64;
            acc_sum += acc;
            len_sum += len;
            nhe_sum += nhe;
            count += 1;
            e.1 += 1;
            e.2 += acc;
            e.3 += len;
            e.4 += nhe;
        }
    }
    let buckets: BTreeMap<Bucket, BucketMetrics> = per_bucket
        .into_iter()
        .map(|(bucket, (ng, nt, acc, len, nhe))| {
            let params = state.buckets.get(bucket);
            (
                bucket,
                BucketMetrics {
                    groups: ng,
                    trajectories: nt,
                    accuracy: acc / nt as f64,
                    length: len / nt as f64,
                    nhe: nhe / nt as f64,
                    kl_ctrl: None,
                    kappa: params.kl_dual,
                    lambda: params.lambda,
                    target: params.hwe_target,
                },
            )
        })
        .collect();
    MetricRecord {
        iter: state.iter,
        mode: config.mode.name().to_string(),
        skipped: false,
        accuracy: acc_sum / count as f64,
        length: len_sum / count as f64,
        nhe: nhe_sum / count as f64,
        tau_high: tau,
        kl_ctrl: None,
        loss: None,
        clip_fraction: None,
        filtered_fraction: 0.0,
        buckets,
    }
}
