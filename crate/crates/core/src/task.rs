//! Synthetic verifiable tasks with a single integer difficulty knob.
//!
//! A task is a modular-arithmetic chain over the digit tokens 0..9. The
//! prompt ends with an anchor digit `a` and a marker digit `m` encoding the
//! chain length; earlier prompt positions carry the hidden increments. The
//! gold answer is the chain of running values
//!
//!   v_1 = (a + m) mod 10,   v_{j+1} = (v_j + h_j) mod 10,  h_j in {1, 2},
//!
//! one value per chain step. The first value is a function of the last two
//! prompt tokens (within reach of a short-context policy, with the marker
//! telling it how deep the chain runs), while every further value folds in a
//! hidden increment that sits too far back in the prompt to recover, so each
//! extra chain step is a coin-flip guess and longer chains are strictly
//! harder. The verifier accepts a response whose tokens before the first
//! STOP end with the gold answer.
//!
//! Token ids: digits 0..9, a connective/filler token, then STOP last.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of digit tokens in the task alphabet.
pub const DIGIT_TOKENS: u32 = 10;
/// Connective/filler token id, flagged as a reasoning marker by the generator.
pub const CONNECTIVE_TOKEN: u32 = 10;
/// Minimum vocabulary size supported by the task generator (digits, connective, STOP).
pub const TASK_VOCAB: usize = 12;

/// One verifiable instance: prompt, gold answer, and the suffix-match verifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskInstance {
    pub prompt: Vec<u32>,
    pub gold_answer: Vec<u32>,
    pub difficulty_knob: u32,
    /// STOP token id the verifier splits on.
    pub stop_token: u32,
}

impl TaskInstance {
    /// Verify a complete sequence (prompt ++ response): the tokens strictly
    /// before the first STOP must end with the gold answer.
    pub fn verify_sequence(&self, sequence: &[u32]) -> bool {
        let cut = sequence
            .iter()
            .position(|&t| t == self.stop_token)
            .unwrap_or(sequence.len());
        sequence[..cut].ends_with(&self.gold_answer)
    }

    /// Verify a response sampled for this task's prompt.
    pub fn verify_response(&self, response: &[u32]) -> bool {
        let mut full = Vec::with_capacity(self.prompt.len() + response.len());
        full.extend_from_slice(&self.prompt);
        full.extend_from_slice(response);
        self.verify_sequence(&full)
    }
}

/// Generate a chain task of the given difficulty. Deterministic per seed.
pub fn make_task(difficulty_knob: u32, seed: u64) -> Result<TaskInstance> {
    make_task_with_stop(difficulty_knob, seed, (TASK_VOCAB - 1) as u32)
}

/// Same as [`make_task`] with an explicit STOP id for larger vocabularies.
pub fn make_task_with_stop(difficulty_knob: u32, seed: u64, stop_token: u32) -> Result<TaskInstance> {
    if difficulty_knob < 1 {
        return Err(Error::InvalidArgument("difficulty_knob must be >= 1".into()));
    }
    if stop_token < DIGIT_TOKENS {
        return Err(Error::InvalidArgument(
            "stop token must not collide with the digit alphabet".into(),
        ));
    }
    let k = difficulty_knob as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0..DIGIT_TOKENS);
    let marker = difficulty_knob.min(9);
    let hidden: Vec<u32> = (0..k.saturating_sub(1))
        .map(|_| rng.random_range(1..=2u32))
        .collect();

    let mut prompt = hidden.clone();
    prompt.push(a);
    prompt.push(marker);

    let mut gold = Vec::with_capacity(k);
    let mut v = (a + marker) % DIGIT_TOKENS;
    gold.push(v);
    for &h in &hidden {
        v = (v + h) % DIGIT_TOKENS;
        gold.push(v);
    }

    Ok(TaskInstance {
        prompt,
        gold_answer: gold,
        difficulty_knob,
        stop_token,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{sample_rollout, PolicyTable, SamplingParams};

    #[test]
    fn generation_is_deterministic() {
        let a = make_task(1, 7).unwrap();
        let b = make_task(1, 7).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.gold_answer, b.gold_answer);
    }

    #[test]
    fn gold_answer_passes_verifier() {
        for seed in 0..1000u64 {
            let knob = 1 + (seed % 6) as u32;
            let task = make_task(knob, seed).unwrap();
            assert!(!task.gold_answer.is_empty());
            assert!(task.gold_answer.iter().all(|&t| t != task.stop_token));
            let mut seq = task.prompt.clone();
            seq.extend_from_slice(&task.gold_answer);
            seq.push(task.stop_token);
            assert!(task.verify_sequence(&seq), "seed {seed}");
        }
    }

    #[test]
    fn answer_length_tracks_knob() {
        for knob in 1..=8u32 {
            let task = make_task(knob, 123).unwrap();
            assert_eq!(task.gold_answer.len(), knob as usize);
        }
    }

    #[test]
    fn easy_tasks_pass_more_often_than_hard_under_uniform_policy() {
        // Monte Carlo difficulty check: pass@8 under the untrained (uniform)
        // policy, 1000 instances per knob.
        let policy = PolicyTable::new(TASK_VOCAB, 2);
        let params = SamplingParams {
            max_len: 16,
            temperature: 1.0,
            top_p: 1.0,
        };
        let mut passes = [0u32; 2];
        for (slot, knob) in [(0usize, 1u32), (1usize, 8u32)] {
            for inst in 0..1000u64 {
                let task = make_task(knob, 5000 + inst).unwrap();
                for g in 0..8u64 {
                    let t = sample_rollout(&policy, &task, &params, inst * 31 + g).unwrap();
                    if t.accuracy {
                        passes[slot] += 1;
                    }
                }
            }
        }
        assert!(
            passes[0] > passes[1],
            "knob=1 passes {} should exceed knob=8 passes {}",
            passes[0],
            passes[1]
        );
    }
}
