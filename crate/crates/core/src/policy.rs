//! Tabular-softmax autoregressive policy.
//!
//! The policy is a table of logit rows indexed by the last `context_order`
//! tokens of (prompt ++ generated output). Rows that have never been touched
//! by a gradient step are implicitly zero, i.e. uniform after softmax. Three
//! copies of the table live side by side: the live weights, a reference copy
//! frozen at stage start (KL anchor), and an old-policy copy refreshed at the
//! start of every outer iteration (importance ratios).
//!
//! Everything is small enough that distributions are explicit, gradients are
//! closed form, and expectations can be brute-forced by enumeration in tests.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::task::TaskInstance;

/// Sampling parameters shared by rollouts and branches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_len: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl SamplingParams {
    fn validate(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One sampled response: tokens plus the per-step distributions actually
/// sampled from (after temperature scaling and top-p renormalization),
/// the realized log-probabilities and entropies on those distributions,
/// and the verifier outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<u32>,
    pub tokens: Vec<u32>,
    pub step_distributions: Vec<Vec<f64>>,
    pub logprobs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub accuracy: bool,
    pub seed: u64,
    /// How many steps fell back to argmax because top-p filtering left no mass.
    pub topp_fallbacks: u32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn accuracy_reward(&self) -> f64 {
        if self.accuracy {
            1.0
        } else {
            0.0
        }
    }
}

/// JSONL row for trajectory dumps: one record per trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub prompt: Vec<u32>,
    pub tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub accuracy: u8,
    pub seed: u64,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            prompt: t.prompt.clone(),
            tokens: t.tokens.clone(),
            logprobs: t.logprobs.clone(),
            entropies: t.entropies.clone(),
            accuracy: t.accuracy as u8,
            seed: t.seed,
        }
    }
}

/// Sparse gradient over logit rows, keyed by context id.
#[derive(Debug, Clone, Default)]
pub struct GradientTable {
    rows: BTreeMap<u64, Vec<f64>>,
}

impl GradientTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&u64, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn row(&self, ctx: u64) -> Option<&Vec<f64>> {
        self.rows.get(&ctx)
    }

    /// Accumulate `coeff * values` into the row for `ctx`.
    pub fn accumulate(&mut self, ctx: u64, values: &[f64], coeff: f64) {
        let row = self
            .rows
            .entry(ctx)
            .or_insert_with(|| vec![0.0; values.len()]);
        for (r, v) in row.iter_mut().zip(values) {
            *r += coeff * v;
        }
    }

    /// Largest absolute entry, useful for diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Tabular softmax policy with frozen reference and old-policy copies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyTable {
    vocab_size: usize,
    context_order: usize,
    weights: BTreeMap<u64, Vec<f64>>,
    reference_weights: BTreeMap<u64, Vec<f64>>,
    old_weights: BTreeMap<u64, Vec<f64>>,
}

impl PolicyTable {
    pub fn new(vocab_size: usize, context_order: usize) -> Self {
        assert!(vocab_size >= 2, "vocab must contain STOP and one more token");
        assert!(context_order >= 1);
        PolicyTable {
            vocab_size,
            context_order,
            weights: BTreeMap::new(),
            reference_weights: BTreeMap::new(),
            old_weights: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    /// STOP is an ordinary vocabulary member, by convention the last id.
    pub fn stop_token(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    /// Padding sentinel used when fewer than `context_order` tokens precede a step.
    fn bos_symbol(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Encode the last `context_order` tokens into a table key.
    pub fn encode_context(&self, window: &[u32]) -> u64 {
        debug_assert_eq!(window.len(), self.context_order);
        let base = (self.vocab_size + 1) as u64;
        let mut id = 0u64;
        for &tok in window {
            debug_assert!((tok as u64) < base);
            id = id * base + tok as u64;
        }
        id
    }

    /// Context ids for every step of a (prompt, tokens) pair: the id under
    /// which `tokens[t]` was (or would be) emitted.
    pub fn step_contexts(&self, prompt: &[u32], tokens: &[u32]) -> Vec<u64> {
        let k = self.context_order;
        let bos = self.bos_symbol();
        let mut history: Vec<u32> = Vec::with_capacity(prompt.len() + tokens.len());
        history.extend_from_slice(prompt);
        let mut out = Vec::with_capacity(tokens.len());
        let mut window = vec![bos; k];
        for i in 0..tokens.len() {
            let h = history.len();
            for (j, slot) in window.iter_mut().enumerate() {
                let back = k - j;
                *slot = if h >= back { history[h - back] } else { bos };
            }
            out.push(self.encode_context(&window));
            history.push(tokens[i]);
        }
        out
    }

    fn softmax_of(row: Option<&Vec<f64>>, vocab: usize, inv_temp: f64) -> Vec<f64> {
        let mut z = vec![0.0; vocab];
        if let Some(r) = row {
            z.copy_from_slice(r);
        }
        let mut max = f64::NEG_INFINITY;
        for v in &mut z {
            *v *= inv_temp;
            if *v > max {
                max = *v;
            }
        }
        let mut sum = 0.0;
        for v in &mut z {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut z {
            *v /= sum;
        }
        z
    }

    /// Softmax of the live row for `ctx` (temperature 1).
    pub fn probs(&self, ctx: u64) -> Vec<f64> {
        Self::softmax_of(self.weights.get(&ctx), self.vocab_size, 1.0)
    }

    /// Softmax of the frozen reference row.
    pub fn probs_ref(&self, ctx: u64) -> Vec<f64> {
        Self::softmax_of(self.reference_weights.get(&ctx), self.vocab_size, 1.0)
    }

    /// Softmax of the old-policy row.
    pub fn probs_old(&self, ctx: u64) -> Vec<f64> {
        Self::softmax_of(self.old_weights.get(&ctx), self.vocab_size, 1.0)
    }

    /// Temperature-scaled softmax of the live row, used by rollout sampling.
    pub fn probs_tempered(&self, ctx: u64, temperature: f64) -> Vec<f64> {
        Self::softmax_of(self.weights.get(&ctx), self.vocab_size, 1.0 / temperature)
    }

    /// Overwrite a logit row directly (test setup and task-specific priors).
    pub fn set_row(&mut self, ctx: u64, row: Vec<f64>) {
        assert_eq!(row.len(), self.vocab_size);
        self.weights.insert(ctx, row);
    }

    pub fn row(&self, ctx: u64) -> Option<&Vec<f64>> {
        self.weights.get(&ctx)
    }

    /// Freeze the current weights as the reference policy.
    pub fn freeze_reference(&mut self) {
        self.reference_weights = self.weights.clone();
    }

    /// Refresh the old-policy copy from the current weights.
    pub fn refresh_old(&mut self) {
        self.old_weights = self.weights.clone();
    }

    /// Gradient step on the live weights only; reference and old copies are
    /// never touched here.
    pub fn apply_gradient(&mut self, grad: &GradientTable, scale: f64) {
        for (&ctx, g) in grad.rows() {
            let row = self
                .weights
                .entry(ctx)
                .or_insert_with(|| vec![0.0; self.vocab_size]);
            for (w, gv) in row.iter_mut().zip(g) {
                *w += scale * gv;
            }
        }
    }

    /// Number of materialized live rows.
    pub fn touched_rows(&self) -> usize {
        self.weights.len()
    }
}

/// Apply temperature and nearest-mass top-p to a context's distribution.
///
/// Tokens are taken in descending probability (ties by ascending id) until
/// the cumulative mass first reaches `top_p`; the survivors are renormalized
/// in place over the full vocabulary (zeros elsewhere). Returns the
/// distribution and whether the argmax fallback fired.
fn nucleus_distribution(mut probs: Vec<f64>, top_p: f64) -> (Vec<f64>, bool) {
    let v = probs.len();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; v];
    let mut cum = 0.0;
    for &idx in &order {
        keep[idx] = true;
        cum += probs[idx];
        if cum >= top_p {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..v {
        if !keep[i] {
            probs[i] = 0.0;
        }
        total += probs[i];
    }
    if !(total > 0.0) || !total.is_finite() {
        // Degenerate filter: fall back to a point mass on the argmax.
        let mut fallback = vec![0.0; v];
        fallback[order[0]] = 1.0;
        return (fallback, true);
    }
    for p in &mut probs {
        *p /= total;
    }
    (probs, false)
}

/// Entropy in nats of an explicit distribution, with 0 * log 0 = 0.
pub(crate) fn entropy_of(dist: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in dist {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

fn sample_index(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

struct StepDraw {
    token: u32,
    dist: Vec<f64>,
    logprob: f64,
    entropy: f64,
    fallback: bool,
}

fn draw_step(
    policy: &PolicyTable,
    ctx: u64,
    params: &SamplingParams,
    rng: &mut ChaCha8Rng,
) -> StepDraw {
    let tempered = policy.probs_tempered(ctx, params.temperature);
    let (dist, fallback) = nucleus_distribution(tempered, params.top_p);
    let token = sample_index(&dist, rng) as u32;
    let logprob = dist[token as usize].ln();
    let entropy = entropy_of(&dist);
    StepDraw {
        token,
        dist,
        logprob,
        entropy,
        fallback,
    }
}

/// Sample one response for `task`, stopping at the first STOP token or at
/// `max_len`. Deterministic given `seed`.
pub fn sample_rollout(
    policy: &PolicyTable,
    task: &TaskInstance,
    params: &SamplingParams,
    seed: u64,
) -> Result<Trajectory> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stop = policy.stop_token();
    let k = policy.context_order();
    let bos = policy.vocab_size() as u32;

    let mut history: Vec<u32> = task.prompt.clone();
    let mut window = vec![bos; k];
    let mut tokens = Vec::new();
    let mut dists = Vec::new();
    let mut logprobs = Vec::new();
    let mut entropies = Vec::new();
    let mut fallbacks = 0u32;

    while tokens.len() < params.max_len {
        let h = history.len();
        for (j, slot) in window.iter_mut().enumerate() {
            let back = k - j;
            *slot = if h >= back { history[h - back] } else { bos };
        }
        let ctx = policy.encode_context(&window);
        let step = draw_step(policy, ctx, params, &mut rng);
        tokens.push(step.token);
        dists.push(step.dist);
        logprobs.push(step.logprob);
        entropies.push(step.entropy);
        if step.fallback {
            fallbacks += 1;
        }
        history.push(step.token);
        if step.token == stop {
            break;
        }
    }

    let accuracy = task.verify_response(&tokens);
    Ok(Trajectory {
        prompt: task.prompt.clone(),
        tokens,
        step_distributions: dists,
        logprobs,
        entropies,
        accuracy,
        seed,
        topp_fallbacks: fallbacks,
    })
}

/// Branch additional trajectories off `parent` at the given trigger steps.
///
/// Each branch copies the parent's records for steps `0..t` and resamples
/// from step `t` onward under the same sampling parameters, with a fresh
/// sub-seed per (trigger, branch). The overall length cap is unchanged.
pub fn branch_rollouts(
    policy: &PolicyTable,
    task: &TaskInstance,
    parent: &Trajectory,
    trigger_steps: &[usize],
    branches_per_trigger: usize,
    params: &SamplingParams,
) -> Result<Vec<Trajectory>> {
    params.validate()?;
    let mut out = Vec::new();
    for &t in trigger_steps {
        if t >= parent.len() {
            return Err(Error::InvalidArgument(format!(
                "trigger step {t} out of range for trajectory of length {}",
                parent.len()
            )));
        }
        for b in 0..branches_per_trigger {
            let seed = seeds::derive2(parent.seed, t as u64, b as u64);
            out.push(resample_from(policy, task, parent, t, params, seed)?);
        }
    }
    Ok(out)
}

fn resample_from(
    policy: &PolicyTable,
    task: &TaskInstance,
    parent: &Trajectory,
    from_step: usize,
    params: &SamplingParams,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stop = policy.stop_token();
    let k = policy.context_order();
    let bos = policy.vocab_size() as u32;

    let mut history: Vec<u32> = task.prompt.clone();
    history.extend_from_slice(&parent.tokens[..from_step]);

    let mut tokens = parent.tokens[..from_step].to_vec();
    let mut dists = parent.step_distributions[..from_step].to_vec();
    let mut logprobs = parent.logprobs[..from_step].to_vec();
    let mut entropies = parent.entropies[..from_step].to_vec();
    let mut fallbacks = 0u32;
    let mut window = vec![bos; k];

    while tokens.len() < params.max_len {
        let h = history.len();
        for (j, slot) in window.iter_mut().enumerate() {
            let back = k - j;
            *slot = if h >= back { history[h - back] } else { bos };
        }
        let ctx = policy.encode_context(&window);
        let step = draw_step(policy, ctx, params, &mut rng);
        tokens.push(step.token);
        dists.push(step.dist);
        logprobs.push(step.logprob);
        entropies.push(step.entropy);
        if step.fallback {
            fallbacks += 1;
        }
        history.push(step.token);
        if step.token == stop {
            break;
        }
    }

    let accuracy = task.verify_response(&tokens);
    Ok(Trajectory {
        prompt: task.prompt.clone(),
        tokens,
        step_distributions: dists,
        logprobs,
        entropies,
        accuracy,
        seed,
        topp_fallbacks: fallbacks,
    })
}

/// Sum over steps of `advantage[t] * d log pi(tokens[t] | context_t) / d theta`
/// for the tabular softmax. Only rows of visited contexts are nonzero.
pub fn exact_policy_gradient(
    policy: &PolicyTable,
    trajectory: &Trajectory,
    token_advantages: &[f64],
) -> Result<GradientTable> {
    if token_advantages.len() != trajectory.len() {
        return Err(Error::ShapeMismatch(format!(
            "advantages length {} != trajectory length {}",
            token_advantages.len(),
            trajectory.len()
        )));
    }
    let contexts = policy.step_contexts(&trajectory.prompt, &trajectory.tokens);
    let mut grad = GradientTable::new();
    let v = policy.vocab_size();
    let mut scratch = vec![0.0; v];
    for (t, &ctx) in contexts.iter().enumerate() {
        let a = token_advantages[t];
        if a == 0.0 {
            continue;
        }
        let p = policy.probs(ctx);
        let tok = trajectory.tokens[t] as usize;
        for j in 0..v {
            scratch[j] = -p[j];
        }
        scratch[tok] += 1.0;
        grad.accumulate(ctx, &scratch, a);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskInstance;

    fn toy_task(prompt: Vec<u32>, gold: Vec<u32>, stop: u32) -> TaskInstance {
        TaskInstance {
            prompt,
            gold_answer: gold,
            difficulty_knob: 1,
            stop_token: stop,
        }
    }

    fn params(max_len: usize) -> SamplingParams {
        SamplingParams {
            max_len,
            temperature: 1.0,
            top_p: 1.0,
        }
    }

    #[test]
    fn deterministic_policy_replays_argmax_chain() {
        // Near-one-hot rows: +1e3 logits make the softmax exactly one-hot in f64.
        let mut policy = PolicyTable::new(4, 2);
        let stop = policy.stop_token();
        // Route every context deterministically: ... -> 1 -> 2 -> STOP.
        let all_ctxs: Vec<u64> = {
            let base = 5u64;
            (0..base * base).collect()
        };
        for ctx in all_ctxs {
            let mut row = vec![0.0; 4];
            row[1] = 1e3;
            policy.set_row(ctx, row);
        }
        let c12 = policy.encode_context(&[1, 1]);
        let mut row = vec![0.0; 4];
        row[stop as usize] = 1e3;
        policy.set_row(c12, row);

        let task = toy_task(vec![0, 0], vec![1], stop);
        let t = sample_rollout(&policy, &task, &params(10), 9).unwrap();
        assert_eq!(t.tokens, vec![1, 1, stop]);
        for h in &t.entropies {
            assert_eq!(*h, 0.0);
        }
    }

    #[test]
    fn uniform_policy_entropy_is_log_vocab() {
        let policy = PolicyTable::new(4, 2);
        let task = toy_task(vec![0, 1], vec![1], policy.stop_token());
        let t = sample_rollout(&policy, &task, &params(6), 3).unwrap();
        for h in &t.entropies {
            assert!((h - 4.0_f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let policy = PolicyTable::new(12, 2);
        let task = toy_task(vec![3, 4], vec![7], policy.stop_token());
        let a = sample_rollout(&policy, &task, &params(16), 42).unwrap();
        let b = sample_rollout(&policy, &task, &params(16), 42).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.logprobs, b.logprobs);
        assert_eq!(a.entropies, b.entropies);
    }

    #[test]
    fn logprobs_match_distributions() {
        let policy = PolicyTable::new(6, 2);
        let task = toy_task(vec![1, 2], vec![3], policy.stop_token());
        let t = sample_rollout(&policy, &task, &params(8), 11).unwrap();
        for (i, &tok) in t.tokens.iter().enumerate() {
            let expect = t.step_distributions[i][tok as usize].ln();
            assert!((t.logprobs[i] - expect).abs() < 1e-10);
            assert!(t.entropies[i] >= 0.0 && t.entropies[i] <= (6.0_f64).ln() + 1e-12);
        }
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let policy = PolicyTable::new(5, 2);
        let task = toy_task(vec![0, 1], vec![2], policy.stop_token());
        let t = sample_rollout(&policy, &task, &params(4), 5).unwrap();
        let g = exact_policy_gradient(&policy, &t, &vec![0.0; t.len()]).unwrap();
        assert!(g.is_empty() || g.max_abs() == 0.0);
    }

    #[test]
    fn single_step_uniform_gradient_is_onehot_minus_uniform() {
        let policy = PolicyTable::new(5, 2);
        let stop = policy.stop_token();
        let task = toy_task(vec![0, 1], vec![2], stop);
        // Force a single-step trajectory by truncating at max_len = 1.
        let t = sample_rollout(&policy, &task, &params(1), 5).unwrap();
        let g = exact_policy_gradient(&policy, &t, &[1.0]).unwrap();
        let ctx = policy.step_contexts(&t.prompt, &t.tokens)[0];
        let row = g.row(ctx).unwrap();
        for (j, &v) in row.iter().enumerate() {
            let expect = if j == t.tokens[0] as usize { 1.0 - 0.2 } else { -0.2 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn advantage_length_mismatch_is_rejected() {
        let policy = PolicyTable::new(5, 2);
        let task = toy_task(vec![0, 1], vec![2], policy.stop_token());
        let t = sample_rollout(&policy, &task, &params(4), 5).unwrap();
        let wrong = vec![1.0; t.len() + 1];
        assert!(exact_policy_gradient(&policy, &t, &wrong).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..50 {
            let vocab = 6;
            let mut policy = PolicyTable::new(vocab, 2);
            let task = toy_task(vec![0, 1], vec![2], policy.stop_token());
            // Randomize some rows so probabilities are non-uniform.
            for _ in 0..10 {
                let ctx = rng.random_range(0..49u64);
                let row: Vec<f64> = (0..vocab).map(|_| rng.random_range(-1.0..1.0)).collect();
                policy.set_row(ctx, row);
            }
            let t = sample_rollout(&policy, &task, &params(4), 1000 + trial).unwrap();
            let adv: Vec<f64> = (0..t.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let grad = exact_policy_gradient(&policy, &t, &adv).unwrap();

            let objective = |p: &PolicyTable| -> f64 {
                let ctxs = p.step_contexts(&t.prompt, &t.tokens);
                ctxs.iter()
                    .zip(&t.tokens)
                    .zip(&adv)
                    .map(|((&c, &tok), &a)| a * p.probs(c)[tok as usize].ln())
                    .sum()
            };

            let h = 1e-5;
            let ctxs = policy.step_contexts(&t.prompt, &t.tokens);
            for &ctx in &ctxs {
                for j in 0..vocab {
                    let mut plus = policy.clone();
                    let mut row = plus.row(ctx).cloned().unwrap_or_else(|| vec![0.0; vocab]);
                    row[j] += h;
                    plus.set_row(ctx, row);
                    let mut minus = policy.clone();
                    let mut row = minus.row(ctx).cloned().unwrap_or_else(|| vec![0.0; vocab]);
                    row[j] -= h;
                    minus.set_row(ctx, row);
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let an = grad.row(ctx).map(|r| r[j]).unwrap_or(0.0);
                    let scale = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / scale < 1e-5,
                        "trial {trial}: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_steps_never_touch_reference_or_old_copies() {
        let mut policy = PolicyTable::new(5, 2);
        policy.set_row(3, vec![0.5, -0.5, 0.0, 0.2, 0.0]);
        policy.freeze_reference();
        policy.refresh_old();
        let ref_before = policy.probs_ref(3);
        let old_before = policy.probs_old(3);
        let mut grad = GradientTable::new();
        grad.accumulate(3, &[1.0, -1.0, 0.5, 0.0, -0.5], 1.0);
        policy.apply_gradient(&grad, -0.7);
        assert_eq!(policy.probs_ref(3), ref_before);
        assert_eq!(policy.probs_old(3), old_before);
        assert_ne!(policy.probs(3), ref_before);
    }

    #[test]
    fn branches_share_prefix() {
        let policy = PolicyTable::new(12, 2);
        let task = toy_task(vec![3, 4], vec![7], policy.stop_token());
        let p = params(16);
        let parent = sample_rollout(&policy, &task, &p, 21).unwrap();
        if parent.len() <= 3 {
            return;
        }
        let branches = branch_rollouts(&policy, &task, &parent, &[3], 2, &p).unwrap();
        assert_eq!(branches.len(), 2);
        for b in &branches {
            assert_eq!(&b.tokens[..3], &parent.tokens[..3]);
            assert_eq!(&b.logprobs[..3], &parent.logprobs[..3]);
        }
    }

    #[test]
    fn no_triggers_no_branches() {
        let policy = PolicyTable::new(12, 2);
        let task = toy_task(vec![3, 4], vec![7], policy.stop_token());
        let p = params(16);
        let parent = sample_rollout(&policy, &task, &p, 21).unwrap();
        let branches = branch_rollouts(&policy, &task, &parent, &[], 3, &p).unwrap();
        assert!(branches.is_empty());
    }

    #[test]
    fn deterministic_policy_branch_equals_parent_suffix() {
        let mut policy = PolicyTable::new(4, 2);
        let stop = policy.stop_token();
        for ctx in 0..25u64 {
            let mut row = vec![0.0; 4];
            row[if ctx % 2 == 0 { 1 } else { 2 }] = 1e3;
            policy.set_row(ctx, row);
        }
        let c = policy.encode_context(&[2, 1]);
        let mut row = vec![0.0; 4];
        row[stop as usize] = 1e3;
        policy.set_row(c, row);
        let task = toy_task(vec![0, 0], vec![1], stop);
        let p = params(12);
        let parent = sample_rollout(&policy, &task, &p, 3).unwrap();
        if parent.len() < 2 {
            return;
        }
        let branches = branch_rollouts(&policy, &task, &parent, &[1], 1, &p).unwrap();
        assert_eq!(branches[0].tokens, parent.tokens);
    }
}
