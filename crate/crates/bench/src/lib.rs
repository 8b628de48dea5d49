//! Shared setup for the benchmark targets.

use aepo_core::{make_task, PolicyTable, SamplingParams, TaskInstance};

/// A policy with randomized rows so sampling and gradients exercise the
/// non-uniform paths.
pub fn seeded_policy(vocab: usize, contexts: u64) -> PolicyTable {
    let mut policy = PolicyTable::new(vocab, 2);
    let mut s = 0x9E37u64;
    for ctx in 0..contexts {
        let row: Vec<f64> = (0..vocab)
            .map(|_| {
                s = aepo_core::seeds::splitmix64(s);
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        policy.set_row(ctx, row);
    }
    policy.freeze_reference();
    policy.refresh_old();
    policy
}

pub fn bench_task() -> TaskInstance {
    make_task(2, 7).expect("valid knob")
}

pub fn bench_params() -> SamplingParams {
    SamplingParams {
        max_len: 24,
        temperature: 1.0,
        top_p: 0.99,
    }
}
