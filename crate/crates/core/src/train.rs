//! Training orchestration: task sampling, the iteration loop, checkpointing,
//! and the append-only metrics log.
//!
//! The metrics file is JSONL: the first line echoes the full resolved config,
//! then one record per iteration, flushed as written. Checkpoints are JSON
//! dumps with an embedded schema version carrying everything needed to
//! resume: config, policy tables, bucket state, threshold, and iteration
//! counter. Because all randomness is derived from (root seed, iteration,
//! slot), a resumed run continues bit-for-bit where the checkpoint left off.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::optim::{train_step, TrainState};
use crate::policy::TrajectoryRecord;
use crate::seeds;
use crate::task::{make_task_with_stop, TaskInstance};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Versioned checkpoint payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub state: TrainState,
}

/// Paths produced by a training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub iterations_run: u64,
}

/// Sample the iteration's task batch from the configured difficulty mix.
pub fn sample_batch(config: &ExperimentConfig, iter: u64) -> Result<Vec<TaskInstance>> {
    let iter_seed = seeds::derive(config.seed, iter);
    let total: f64 = config.task_mix.values().sum();
    let stop = (config.vocab_size - 1) as u32;
    let mut batch = Vec::with_capacity(config.batch_size);
    for slot in 0..config.batch_size {
        let pick_seed = seeds::derive2(iter_seed, 0x7A5A, slot as u64);
        // Deterministic categorical draw over the mix.
        let u = (seeds::splitmix64(pick_seed) >> 11) as f64 / (1u64 << 53) as f64 * total;
        let mut acc = 0.0;
        let mut knob = *config.task_mix.keys().next_back().expect("validated nonempty");
        for (&k, &w) in &config.task_mix {
            acc += w;
            if u < acc {
                knob = k;
                break;
            }
        }
        let task_seed = seeds::derive2(iter_seed, 0x7B5B, slot as u64);
        batch.push(make_task_with_stop(knob, task_seed, stop)?);
    }
    Ok(batch)
}

pub fn save_checkpoint(path: &Path, config: &ExperimentConfig, state: &TrainState) -> Result<()> {
    let payload = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: config.clone(),
        state: state.clone(),
    };
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &payload)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let payload: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if payload.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint schema {} unsupported (expected {})",
            payload.schema_version, CHECKPOINT_SCHEMA_VERSION
        )));
    }
    Ok(payload)
}

/// Run (or resume) a training experiment, writing metrics and checkpoints
/// under `out_dir`.
pub fn run_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;

    let mut state = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config != *config {
                return Err(Error::InvalidConfig(
                    "resume config differs from checkpoint config".into(),
                ));
            }
            ckpt.state
        }
        None => TrainState::new(config)?,
    };

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = BufWriter::new(if resume.is_some() {
        File::options().append(true).create(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    });
    if resume.is_none() {
        let header = serde_json::json!({ "config": config });
        writeln!(metrics, "{header}")?;
        metrics.flush()?;
    }

    if state.iter == 0 {
        save_checkpoint(&out_dir.join("checkpoint_initial.json"), config, &state)?;
    }

    while state.iter < config.iterations {
        let tasks = sample_batch(config, state.iter)?;
        let record = train_step(&mut state, config, &tasks)?;
        writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
        metrics.flush()?;

        if config.checkpoint_every > 0 && state.iter % config.checkpoint_every == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.json", state.iter));
            save_checkpoint(&path, config, &state)?;
        }
    }

    let final_path = out_dir.join("checkpoint_final.json");
    save_checkpoint(&final_path, config, &state)?;

    if config.dump_rollouts {
        // Post-training rollouts of the final policy on a fresh batch, for
        // the `analyze` subcommand, plus the scored-reward analysis rows.
        let tasks = sample_batch(config, state.iter)?;
        let trajectories = resample_final_rollouts(&state, config, &tasks)?;
        let mut w = BufWriter::new(File::create(out_dir.join("rollouts.jsonl"))?);
        for t in &trajectories {
            writeln!(w, "{}", serde_json::to_string(&TrajectoryRecord::from(t))?)?;
        }
        w.flush()?;
        write_reward_rows(&state, config, &trajectories, &out_dir.join("rewards.csv"))?;
    }

    Ok(RunArtifacts {
        metrics_path,
        final_checkpoint: final_path,
        iterations_run: state.iter,
    })
}

/// Regenerate the final iteration's base rollouts for inspection dumps; uses
/// the same seed scheme as the training step, against the updated policy.
fn resample_final_rollouts(
    state: &TrainState,
    config: &ExperimentConfig,
    tasks: &[TaskInstance],
) -> Result<Vec<crate::policy::Trajectory>> {
    use crate::policy::{sample_rollout, SamplingParams};
    let params = SamplingParams {
        max_len: config.max_len,
        temperature: config.temperature,
        top_p: config.top_p,
    };
    let iter_seed = seeds::derive(state.root_seed, state.iter);
    let mut out = Vec::new();
    for (slot, task) in tasks.iter().enumerate() {
        let prompt_seed = seeds::derive(iter_seed, slot as u64);
        for i in 0..config.group_size {
            out.push(sample_rollout(
                &state.policy,
                task,
                &params,
                seeds::derive(prompt_seed, i as u64),
            )?);
        }
    }
    Ok(out)
}

/// Score a flat list of rollouts (grouped per prompt in order) against the
/// final state and write one shaped-reward row per trajectory.
fn write_reward_rows(
    state: &TrainState,
    config: &ExperimentConfig,
    trajectories: &[crate::policy::Trajectory],
    path: &Path,
) -> Result<()> {
    use crate::difficulty::{assign_bucket, pass_count};
    use crate::entropy::hwe_detect;
    use crate::reward::{deviation, hierarchical_reward};

    let vocab = state.semantic_vocab(config)?;
    let tau = match state.tau_high {
        Some(t) => t,
        None => return Ok(()),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bucket,accuracy,nhe,target,delta,lambda,entropy_term,total")?;
    for group in trajectories.chunks(config.group_size) {
        let bucket = assign_bucket(pass_count(group), group.len())?;
        let params = state.buckets.get(bucket);
        let target = params.hwe_target.unwrap_or(0.0);
        for t in group {
            let profile = hwe_detect(t, tau, config.window, &vocab, config.hwe_mode)?;
            let delta = deviation(profile.hwe_count, target);
            let r = hierarchical_reward(t.accuracy, delta, bucket, params.lambda, config.reward_mode)?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                bucket.name(),
                r.accuracy_reward,
                profile.hwe_count,
                target,
                r.deviation,
                r.multiplier,
                r.entropy_term,
                r.total
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a metrics log back: the embedded config and the per-iteration records.
pub fn read_metrics(path: &Path) -> Result<(ExperimentConfig, Vec<MetricRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("metrics log".into()))??;
    #[derive(Deserialize)]
    struct Header {
        config: ExperimentConfig,
    }
    let header: Header = serde_json::from_str(&header)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header.config, records))
}
