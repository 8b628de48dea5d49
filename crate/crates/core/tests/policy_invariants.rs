//! Statistical invariants of the sampler that are too heavy for unit tests:
//! a chi-square goodness-of-fit check of the sampling distribution and a
//! brute-force enumeration oracle for expectations of bounded functions.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use aepo_core::policy::{sample_rollout, PolicyTable, SamplingParams};
use aepo_core::task::TaskInstance;

fn toy_task(prompt: Vec<u32>, stop: u32) -> TaskInstance {
    TaskInstance {
        prompt,
        gold_answer: vec![1],
        difficulty_knob: 1,
        stop_token: stop,
    }
}

#[test]
fn sampling_matches_softmax_row_chi_square() {
    let vocab = 12usize;
    let mut policy = PolicyTable::new(vocab, 2);
    // A deliberately lopsided first-step row.
    let ctx = policy.encode_context(&[3, 4]);
    let row: Vec<f64> = (0..vocab).map(|j| (j as f64) * 0.25 - 1.0).collect();
    policy.set_row(ctx, row);
    let expected = policy.probs(ctx);

    let task = toy_task(vec![3, 4], policy.stop_token());
    let params = SamplingParams {
        max_len: 1,
        temperature: 1.0,
        top_p: 1.0,
    };
    let n = 100_000usize;
    let mut counts = vec![0usize; vocab];
    for seed in 0..n as u64 {
        let t = sample_rollout(&policy, &task, &params, seed).unwrap();
        counts[t.tokens[0] as usize] += 1;
    }
    let mut stat = 0.0;
    for j in 0..vocab {
        let e = expected[j] * n as f64;
        stat += (counts[j] as f64 - e).powi(2) / e;
    }
    // p > 0.001 of the chi-square test with vocab - 1 degrees of freedom.
    let critical = ChiSquared::new((vocab - 1) as f64)
        .unwrap()
        .inverse_cdf(0.999);
    assert!(
        stat < critical,
        "chi-square stat {stat:.2} exceeds critical value {critical:.2}"
    );
}

/// Enumerate every trajectory of the sampler (vocab <= 5, max_len <= 4) with
/// its exact probability. Independent reimplementation of the step
/// distribution: temperature softmax then nearest-mass top-p.
fn enumerate_trajectories(
    policy: &PolicyTable,
    task: &TaskInstance,
    params: &SamplingParams,
) -> Vec<(Vec<u32>, f64)> {
    fn step_dist(policy: &PolicyTable, ctx: u64, temperature: f64, top_p: f64) -> Vec<f64> {
        let mut p = policy.probs_tempered(ctx, temperature);
        let v = p.len();
        let mut order: Vec<usize> = (0..v).collect();
        order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut keep = vec![false; v];
        for &i in &order {
            keep[i] = true;
            cum += p[i];
            if cum >= top_p {
                break;
            }
        }
        let mut total = 0.0;
        for i in 0..v {
            if !keep[i] {
                p[i] = 0.0;
            }
            total += p[i];
        }
        for x in &mut p {
            *x /= total;
        }
        p
    }

    let stop = policy.stop_token();
    let mut done = Vec::new();
    // (generated prefix, probability)
    let mut frontier = vec![(Vec::<u32>::new(), 1.0f64)];
    for _ in 0..params.max_len {
        let mut next = Vec::new();
        for (prefix, prob) in frontier {
            let ctxs = policy.step_contexts(&task.prompt, &{
                let mut t = prefix.clone();
                t.push(0);
                t
            });
            let ctx = ctxs[prefix.len()];
            let dist = step_dist(policy, ctx, params.temperature, params.top_p);
            for (tok, &p_tok) in dist.iter().enumerate() {
                if p_tok <= 0.0 {
                    continue;
                }
                let mut seq = prefix.clone();
                seq.push(tok as u32);
                let p_seq = prob * p_tok;
                if tok as u32 == stop || seq.len() == params.max_len {
                    done.push((seq, p_seq));
                } else {
                    next.push((seq, p_seq));
                }
            }
        }
        frontier = next;
    }
    done
}

#[test]
fn enumeration_oracle_matches_monte_carlo() {
    let vocab = 5usize;
    let mut policy = PolicyTable::new(vocab, 2);
    let mut s = 1u64;
    for ctx in 0..36u64 {
        let row: Vec<f64> = (0..vocab)
            .map(|_| {
                s = aepo_core::seeds::splitmix64(s);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        policy.set_row(ctx, row);
    }
    let task = toy_task(vec![0, 1], policy.stop_token());
    let params = SamplingParams {
        max_len: 4,
        temperature: 0.8,
        top_p: 0.9,
    };

    let support = enumerate_trajectories(&policy, &task, &params);
    let total_mass: f64 = support.iter().map(|(_, p)| p).sum();
    assert!((total_mass - 1.0).abs() < 1e-10, "mass {total_mass}");

    // Two bounded per-trajectory functions: length, and ends-with-token-2.
    let f_len = |seq: &[u32]| seq.len() as f64;
    let f_end =
        |seq: &[u32]| if seq.iter().rev().find(|&&t| t != policy.stop_token()) == Some(&2) { 1.0 } else { 0.0 };

    for (name, f) in [("length", &f_len as &dyn Fn(&[u32]) -> f64), ("ends_with_2", &f_end)] {
        let exact: f64 = support.iter().map(|(seq, p)| p * f(seq)).sum();
        let second: f64 = support.iter().map(|(seq, p)| p * f(seq) * f(seq)).sum();
        let var = (second - exact * exact).max(0.0);

        let n = 1_000_000usize;
        let mut acc = 0.0;
        for seed in 0..n as u64 {
            let t = sample_rollout(&policy, &task, &params, 777_000_000 + seed).unwrap();
            acc += f(&t.tokens);
        }
        let estimate = acc / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (estimate - exact).abs() <= 3.0 * se.max(1e-9),
            "{name}: estimate {estimate:.6} vs exact {exact:.6} (3 SE = {:.2e})",
            3.0 * se
        );
    }
}
