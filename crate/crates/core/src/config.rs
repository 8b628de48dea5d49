//! Experiment configuration.
//!
//! Configs live in a flat `key = value` text file; every key has a default
//! and unknown keys are rejected. The resolved config is embedded verbatim in
//! the metrics log so a run can be reproduced from its own output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::difficulty::Bucket;
use crate::entropy::HweMode;
use crate::error::{Error, Result};
use crate::reward::RewardMode;

/// Which update rule the trainer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Entropy-shaped advantages, token-adaptive KL, dual-controlled budget.
    Aepo,
    /// Group-normalized advantages, symmetric clip, constant KL weight.
    Grpo,
    /// Token-level aggregation, clip-higher, no KL loss.
    Dapo,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Aepo => "aepo",
            Mode::Grpo => "grpo",
            Mode::Dapo => "dapo",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aepo" => Ok(Mode::Aepo),
            "grpo" => Ok(Mode::Grpo),
            "dapo" => Ok(Mode::Dapo),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

/// Full experiment configuration with one flat key per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub reward_mode: RewardMode,
    pub group_size: usize,
    pub window: usize,
    pub quantile: f64,
    pub rho: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub alpha_kappa: f64,
    pub delta_easy: f64,
    pub delta_medium: f64,
    pub delta_hard: f64,
    pub beta_kl: f64,
    pub kappa_init: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub ema_decay: f64,
    pub lambda_eps: f64,
    pub advantage_eps: f64,
    pub learning_rate: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Difficulty-knob mix, knob -> relative weight.
    pub task_mix: BTreeMap<u32, f64>,
    pub vocab_size: usize,
    pub context_order: usize,
    pub max_len: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub filter_low: f64,
    pub filter_high: f64,
    pub branch_factor: usize,
    pub max_branch_points: usize,
    pub branch_join_group: bool,
    pub hwe_mode: HweMode,
    /// Explicit semantic allowlist; empty means every non-STOP token.
    pub semantic_allowlist: Vec<u32>,
    pub checkpoint_every: u64,
    pub dump_rollouts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Aepo,
            reward_mode: RewardMode::Canonical,
            group_size: 8,
            window: 4,
            quantile: 0.95,
            rho: 0.5,
            eps_low: 0.2,
            eps_high: 0.28,
            alpha_kappa: 0.1,
            delta_easy: 0.01,
            delta_medium: 0.02,
            delta_hard: 0.04,
            beta_kl: 0.01,
            kappa_init: 1.0,
            kappa_min: 0.1,
            kappa_max: 10.0,
            ema_decay: 0.9,
            lambda_eps: 1e-8,
            advantage_eps: 1e-8,
            learning_rate: 120.0,
            iterations: 200,
            batch_size: 32,
            seed: 42,
            task_mix: [(1, 0.34), (2, 0.33), (3, 0.33)].into_iter().collect(),
            vocab_size: 12,
            context_order: 2,
            max_len: 24,
            temperature: 1.0,
            top_p: 0.99,
            filter_low: 0.01,
            filter_high: 0.99,
            branch_factor: 1,
            max_branch_points: 1,
            branch_join_group: true,
            hwe_mode: HweMode::Window,
            semantic_allowlist: Vec::new(),
            checkpoint_every: 50,
            dump_rollouts: false,
        }
    }
}

impl ExperimentConfig {
    /// KL budget for a bucket.
    pub fn delta_for(&self, bucket: Bucket) -> f64 {
        match bucket {
            Bucket::Easy => self.delta_easy,
            Bucket::Medium => self.delta_medium,
            Bucket::Hard => self.delta_hard,
        }
    }

    pub fn budgets(&self) -> BTreeMap<Bucket, f64> {
        Bucket::ALL.iter().map(|&b| (b, self.delta_for(b))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.into()))
            }
        };
        check(self.group_size >= 2, "group_size must be >= 2")?;
        check(self.window >= 1, "window must be >= 1")?;
        check(self.quantile > 0.0 && self.quantile < 1.0, "quantile must be in (0, 1)")?;
        check(self.rho > 0.0 && self.rho <= 1.0, "rho must be in (0, 1]")?;
        check(self.eps_low > 0.0 && self.eps_low < 1.0, "eps_low must be in (0, 1)")?;
        check(self.eps_high > 0.0 && self.eps_high < 1.0, "eps_high must be in (0, 1)")?;
        check(self.alpha_kappa > 0.0, "alpha_kappa must be positive")?;
        for b in Bucket::ALL {
            check(self.delta_for(b) > 0.0, "KL budgets must be positive")?;
        }
        check(self.beta_kl > 0.0, "beta_kl must be positive")?;
        check(
            self.kappa_min > 0.0 && self.kappa_max >= self.kappa_min,
            "kappa bounds must satisfy 0 < kappa_min <= kappa_max",
        )?;
        check(
            self.ema_decay >= 0.0 && self.ema_decay < 1.0,
            "ema_decay must be in [0, 1)",
        )?;
        check(self.lambda_eps > 0.0, "lambda_eps must be positive")?;
        check(self.advantage_eps > 0.0, "advantage_eps must be positive")?;
        check(self.learning_rate > 0.0, "learning_rate must be positive")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(!self.task_mix.is_empty(), "task_mix must not be empty")?;
        for (&knob, &w) in &self.task_mix {
            check(knob >= 1, "task_mix knobs must be >= 1")?;
            check(w > 0.0, "task_mix weights must be positive")?;
        }
        check(self.vocab_size >= 12, "vocab_size must be >= 12 for the task alphabet")?;
        check(self.context_order >= 1, "context_order must be >= 1")?;
        check(self.max_len >= 1, "max_len must be >= 1")?;
        check(self.temperature > 0.0, "temperature must be positive")?;
        check(self.top_p > 0.0 && self.top_p <= 1.0, "top_p must be in (0, 1]")?;
        check(self.filter_low < self.filter_high, "filter_low must be < filter_high")?;
        let stop = (self.vocab_size - 1) as u32;
        for &t in &self.semantic_allowlist {
            check(t != stop, "semantic_allowlist must exclude the STOP token")?;
            check((t as usize) < self.vocab_size, "semantic_allowlist token out of range")?;
        }
        Ok(())
    }

    /// Serialize to the flat `key = value` format, one key per line.
    pub fn to_flat_string(&self) -> String {
        let mut s = String::new();
        let mix = self
            .task_mix
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect::<Vec<_>>()
            .join(",");
        let allow = self
            .semantic_allowlist
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let hwe = match self.hwe_mode {
            HweMode::Window => "window",
            HweMode::SingleToken => "single_token",
        };
        let reward = match self.reward_mode {
            RewardMode::Canonical => "canonical",
            RewardMode::Encourage => "encourage",
        };
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "reward_mode = {reward}");
        let _ = writeln!(s, "group_size = {}", self.group_size);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "quantile = {}", self.quantile);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "eps_low = {}", self.eps_low);
        let _ = writeln!(s, "eps_high = {}", self.eps_high);
        let _ = writeln!(s, "alpha_kappa = {}", self.alpha_kappa);
        let _ = writeln!(s, "delta_easy = {}", self.delta_easy);
        let _ = writeln!(s, "delta_medium = {}", self.delta_medium);
        let _ = writeln!(s, "delta_hard = {}", self.delta_hard);
        let _ = writeln!(s, "beta_kl = {}", self.beta_kl);
        let _ = writeln!(s, "kappa_init = {}", self.kappa_init);
        let _ = writeln!(s, "kappa_min = {}", self.kappa_min);
        let _ = writeln!(s, "kappa_max = {}", self.kappa_max);
        let _ = writeln!(s, "ema_decay = {}", self.ema_decay);
        let _ = writeln!(s, "lambda_eps = {}", self.lambda_eps);
        let _ = writeln!(s, "advantage_eps = {}", self.advantage_eps);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "task_mix = {mix}");
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "context_order = {}", self.context_order);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "top_p = {}", self.top_p);
        let _ = writeln!(s, "filter_low = {}", self.filter_low);
        let _ = writeln!(s, "filter_high = {}", self.filter_high);
        let _ = writeln!(s, "branch_factor = {}", self.branch_factor);
        let _ = writeln!(s, "max_branch_points = {}", self.max_branch_points);
        let _ = writeln!(s, "branch_join_group = {}", self.branch_join_group);
        let _ = writeln!(s, "hwe_mode = {hwe}");
        let _ = writeln!(s, "semantic_allowlist = {allow}");
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "dump_rollouts = {}", self.dump_rollouts);
        s
    }

    /// Parse the flat format. Missing keys keep their defaults; unknown keys
    /// are rejected so typos do not silently change a run.
    pub fn from_flat_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set_key(key, value).map_err(|e| {
                Error::InvalidConfig(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value '{value}' for {key}")))
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "reward_mode" => {
                self.reward_mode = match value {
                    "canonical" => RewardMode::Canonical,
                    "encourage" => RewardMode::Encourage,
                    _ => return Err(Error::InvalidConfig(format!("unknown reward_mode '{value}'"))),
                }
            }
            "group_size" => self.group_size = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "quantile" => self.quantile = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "eps_low" => self.eps_low = num(key, value)?,
            "eps_high" => self.eps_high = num(key, value)?,
            "alpha_kappa" => self.alpha_kappa = num(key, value)?,
            "delta_easy" => self.delta_easy = num(key, value)?,
            "delta_medium" => self.delta_medium = num(key, value)?,
            "delta_hard" => self.delta_hard = num(key, value)?,
            "beta_kl" => self.beta_kl = num(key, value)?,
            "kappa_init" => self.kappa_init = num(key, value)?,
            "kappa_min" => self.kappa_min = num(key, value)?,
            "kappa_max" => self.kappa_max = num(key, value)?,
            "ema_decay" => self.ema_decay = num(key, value)?,
            "lambda_eps" => self.lambda_eps = num(key, value)?,
            "advantage_eps" => self.advantage_eps = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "task_mix" => {
                let mut mix = BTreeMap::new();
                for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                    let (k, w) = part.trim().split_once(':').ok_or_else(|| {
                        Error::InvalidConfig(format!("bad task_mix entry '{part}'"))
                    })?;
                    mix.insert(num::<u32>("task_mix knob", k.trim())?, num::<f64>("task_mix weight", w.trim())?);
                }
                self.task_mix = mix;
            }
            "vocab_size" => self.vocab_size = num(key, value)?,
            "context_order" => self.context_order = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "top_p" => self.top_p = num(key, value)?,
            "filter_low" => self.filter_low = num(key, value)?,
            "filter_high" => self.filter_high = num(key, value)?,
            "branch_factor" => self.branch_factor = num(key, value)?,
            "max_branch_points" => self.max_branch_points = num(key, value)?,
            "branch_join_group" => self.branch_join_group = num(key, value)?,
            "hwe_mode" => {
                self.hwe_mode = match value {
                    "window" => HweMode::Window,
                    "single_token" => HweMode::SingleToken,
                    _ => return Err(Error::InvalidConfig(format!("unknown hwe_mode '{value}'"))),
                }
            }
            "semantic_allowlist" => {
                self.semantic_allowlist = value
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| num::<u32>("semantic_allowlist", p.trim()))
                    .collect::<Result<Vec<u32>>>()?;
            }
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "dump_rollouts" => self.dump_rollouts = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}
