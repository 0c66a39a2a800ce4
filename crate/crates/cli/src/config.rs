//! Flat `key = value` experiment configuration with typed parsing and
//! unknown-key rejection.
//!
//! Two default profiles exist: `paper` carries the reference hyperparameter
//! table; `desk` shrinks budgets (epochs, steps, network width) to what a
//! laptop CPU finishes in minutes while keeping every algorithmic knob
//! identical.

use std::fmt;

use adept_core::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Sac,
    Iql,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Sac => "sac",
            LearnerKind::Iql => "iql",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: String,
    /// Dataset file the run trains on.
    pub dataset: String,
    pub learner: LearnerKind,
    pub k_steps: usize,
    pub cosine_s: f64,
    pub horizon: usize,
    /// Rollouts per epoch (N_e). The reference table lists "evaluation
    /// steps per epoch"; read here as the number of model rollouts, each of
    /// at most `horizon` transitions.
    pub rollouts_per_epoch: usize,
    /// Batch size for policy improvement (B_p).
    pub policy_batch: usize,
    /// Batch size for world-model updates (B_m).
    pub model_batch: usize,
    pub guidance_weight: f64,
    pub cond_dropout: f64,
    pub weight_clip_low: f64,
    pub weight_clip_high: f64,
    /// Disable to apply raw density ratios.
    pub weight_clip: bool,
    /// Clip generated states and rewards into the dataset range.
    pub clip_generated: bool,
    /// Disable to freeze the world model after initialization.
    pub importance_sampling: bool,
    /// Disable to train the learner on the dataset alone (no world model).
    pub use_synthetic: bool,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub iwu_steps_per_epoch: usize,
    pub wm_init_steps: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub bc_steps: usize,
    pub hidden_dim: usize,
    pub replay_capacity: usize,
    pub eval_episodes: usize,
    /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub out_dir: String,
    /// Fixed real-data fraction for mixed batches; unset samples the union
    /// uniformly.
    pub real_fraction: Option<f64>,
    /// Write elapsed seconds into the metrics (disable for byte-identical
    /// reruns).
    pub wallclock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            profile: "paper".to_string(),
            dataset: String::new(),
            learner: LearnerKind::Iql,
            k_steps: 10,
            cosine_s: 1e-4,
            horizon: 10,
            rollouts_per_epoch: 1000,
            policy_batch: 256,
            model_batch: 1024,
            guidance_weight: 0.1,
            cond_dropout: 0.1,
            weight_clip_low: 0.1,
            weight_clip_high: 10.0,
            weight_clip: true,
            clip_generated: true,
            importance_sampling: true,
            use_synthetic: true,
            learning_rate: 3e-4,
            gamma: 0.99,
            epochs: 1000,
            steps_per_epoch: 1000,
            iwu_steps_per_epoch: 1,
            wm_init_steps: 50_000,
            plateau_window: 5_000,
            plateau_tol: 1e-4,
            bc_steps: 50_000,
            hidden_dim: 256,
            replay_capacity: 1_000_000,
            eval_episodes: 10,
            checkpoint_every: 100,
            seed: 0,
            out_dir: "adept-run".to_string(),
            real_fraction: None,
            wallclock: true,
        }
    }
}

impl ExperimentConfig {
    /// Laptop-scale profile: same algorithm, smaller budgets.
    pub fn desk() -> Self {
        ExperimentConfig {
            profile: "desk".to_string(),
            epochs: 100,
            steps_per_epoch: 200,
            rollouts_per_epoch: 10,
            iwu_steps_per_epoch: 20,
            wm_init_steps: 8_000,
            plateau_window: 2_000,
            bc_steps: 5_000,
            hidden_dim: 64,
            eval_episodes: 10,
            checkpoint_every: 0,
            ..ExperimentConfig::default()
        }
    }

    pub fn weight_clip_range(&self) -> Option<(f64, f64)> {
        if self.weight_clip {
            Some((self.weight_clip_low, self.weight_clip_high))
        } else {
            None
        }
    }
}

/// Applies one `key = value` pair.
pub fn apply_kv(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse::<T>()
            .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
    }
    fn parse_bool(key: &str, value: &str) -> Result<bool> {
        match value {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(Error::Config(format!(
                "invalid boolean {value:?} for key {key:?}"
            ))),
        }
    }
    match key {
        "profile" => match value {
            "paper" | "desk" => cfg.profile = value.to_string(),
            _ => {
                return Err(Error::Config(format!(
                    "unknown profile {value:?} (expected paper or desk)"
                )))
            }
        },
        "dataset" => cfg.dataset = value.to_string(),
        "learner" => {
            cfg.learner = match value {
                "sac" => LearnerKind::Sac,
                "iql" => LearnerKind::Iql,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown learner {value:?} (expected sac or iql)"
                    )))
                }
            }
        }
        "k_steps" => cfg.k_steps = parse(key, value)?,
        "cosine_s" => cfg.cosine_s = parse(key, value)?,
        "horizon" => cfg.horizon = parse(key, value)?,
        "rollouts_per_epoch" => cfg.rollouts_per_epoch = parse(key, value)?,
        "policy_batch" => cfg.policy_batch = parse(key, value)?,
        "model_batch" => cfg.model_batch = parse(key, value)?,
        "guidance_weight" => cfg.guidance_weight = parse(key, value)?,
        "cond_dropout" => cfg.cond_dropout = parse(key, value)?,
        "weight_clip_low" => cfg.weight_clip_low = parse(key, value)?,
        "weight_clip_high" => cfg.weight_clip_high = parse(key, value)?,
        "weight_clip" => cfg.weight_clip = parse_bool(key, value)?,
        "clip_generated" => cfg.clip_generated = parse_bool(key, value)?,
        "importance_sampling" => cfg.importance_sampling = parse_bool(key, value)?,
        "use_synthetic" => cfg.use_synthetic = parse_bool(key, value)?,
        "learning_rate" => cfg.learning_rate = parse(key, value)?,
        "gamma" => cfg.gamma = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "steps_per_epoch" => cfg.steps_per_epoch = parse(key, value)?,
        "iwu_steps_per_epoch" => cfg.iwu_steps_per_epoch = parse(key, value)?,
        "wm_init_steps" => cfg.wm_init_steps = parse(key, value)?,
        "plateau_window" => cfg.plateau_window = parse(key, value)?,
        "plateau_tol" => cfg.plateau_tol = parse(key, value)?,
        "bc_steps" => cfg.bc_steps = parse(key, value)?,
        "hidden_dim" => cfg.hidden_dim = parse(key, value)?,
        "replay_capacity" => cfg.replay_capacity = parse(key, value)?,
        "eval_episodes" => cfg.eval_episodes = parse(key, value)?,
        "checkpoint_every" => cfg.checkpoint_every = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "out_dir" => cfg.out_dir = value.to_string(),
        "real_fraction" => {
            cfg.real_fraction = if value == "none" {
                None
            } else {
                let f: f64 = parse(key, value)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Config(format!(
                        "real_fraction {f} outside [0, 1]"
                    )));
                }
                Some(f)
            }
        }
        "wallclock" => cfg.wallclock = parse_bool(key, value)?,
        other => return Err(Error::Config(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

/// Parses config text: one `key = value` per line, `#` comments. A
/// `profile` key switches the base defaults before the remaining keys are
/// applied in order.
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    let mut cfg = match pairs.iter().find(|(k, _)| k == "profile") {
        Some((_, v)) if v == "desk" => ExperimentConfig::desk(),
        _ => ExperimentConfig::default(),
    };
    for (k, v) in &pairs {
        apply_kv(&mut cfg, k, v)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
    parse_config_text(&text)
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "profile = {}", self.profile)?;
        writeln!(f, "dataset = {}", self.dataset)?;
        writeln!(f, "learner = {}", self.learner.name())?;
        writeln!(f, "k_steps = {}", self.k_steps)?;
        writeln!(f, "cosine_s = {}", self.cosine_s)?;
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "rollouts_per_epoch = {}", self.rollouts_per_epoch)?;
        writeln!(f, "policy_batch = {}", self.policy_batch)?;
        writeln!(f, "model_batch = {}", self.model_batch)?;
        writeln!(f, "guidance_weight = {}", self.guidance_weight)?;
        writeln!(f, "cond_dropout = {}", self.cond_dropout)?;
        writeln!(f, "weight_clip_low = {}", self.weight_clip_low)?;
        writeln!(f, "weight_clip_high = {}", self.weight_clip_high)?;
        writeln!(f, "weight_clip = {}", self.weight_clip)?;
        writeln!(f, "clip_generated = {}", self.clip_generated)?;
        writeln!(f, "importance_sampling = {}", self.importance_sampling)?;
        writeln!(f, "use_synthetic = {}", self.use_synthetic)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "steps_per_epoch = {}", self.steps_per_epoch)?;
        writeln!(f, "iwu_steps_per_epoch = {}", self.iwu_steps_per_epoch)?;
        writeln!(f, "wm_init_steps = {}", self.wm_init_steps)?;
        writeln!(f, "plateau_window = {}", self.plateau_window)?;
        writeln!(f, "plateau_tol = {}", self.plateau_tol)?;
        writeln!(f, "bc_steps = {}", self.bc_steps)?;
        writeln!(f, "hidden_dim = {}", self.hidden_dim)?;
        writeln!(f, "replay_capacity = {}", self.replay_capacity)?;
        writeln!(f, "eval_episodes = {}", self.eval_episodes)?;
        writeln!(f, "checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "out_dir = {}", self.out_dir)?;
        match self.real_fraction {
            Some(v) => writeln!(f, "real_fraction = {v}")?,
            None => writeln!(f, "real_fraction = none")?,
        }
        writeln!(f, "wallclock = {}", self.wallclock)?;
        Ok(())
    }
}
