//! The closed-loop experiment runner: world-model initialization, then
//! alternating phases of model rollouts, policy improvement, and
//! importance-weighted world-model updates.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adept_core::adam::AdamConfig;
use adept_core::adaptation::{fit_behavior_policy, iwu_step, BcConfig, IwuConfig};
use adept_core::checkpoint::save_checkpoint;
use adept_core::data::Batch;
use adept_core::diffusion::{DiffusionConfig, DiffusionOptimizers, DiffusionWorldModel};
use adept_core::env::{load_dataset, normalize, NormStats, ToyEnv};
use adept_core::error::{Error, Result};
use adept_core::learners::{evaluate_policy, IqlConfig, IqlLearner, SacConfig, SacLearner};
use adept_core::policy::GaussianPolicy;
use adept_core::rng::{derive, Stream};
use adept_core::rollout::{rollout, sample_mixed, ReplayBuffer, RolloutConfig};
use adept_core::tensor::Tensor;

use crate::config::{ExperimentConfig, LearnerKind};

/// One metrics row per epoch. Missing quantities (a SAC run has no value
/// loss; a frozen world model reports no update loss) are NaN.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub epoch: usize,
    pub learner_loss_q: f64,
    pub learner_loss_v: f64,
    pub learner_loss_pi: f64,
    pub diffusion_loss: f64,
    pub mean_importance_weight: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub wallclock_s: f64,
}

pub const METRICS_HEADER: &str = "epoch,learner_loss_q,learner_loss_v,learner_loss_pi,diffusion_loss,mean_importance_weight,eval_return_mean,eval_return_std,wallclock_s";

impl MetricsRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.learner_loss_q,
            self.learner_loss_v,
            self.learner_loss_pi,
            self.diffusion_loss,
            self.mean_importance_weight,
            self.eval_return_mean,
            self.eval_return_std,
            self.wallclock_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub out_dir: PathBuf,
    pub config_text: String,
    pub build_id: String,
    pub rows: Vec<MetricsRow>,
    /// Phase labels in execution order, also written to `run.log`.
    pub phases: Vec<String>,
    pub final_eval_mean: f64,
    pub final_eval_std: f64,
}

/// Resolves the run output directory, honoring the `ADEPT_OUT` override.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("ADEPT_OUT") {
        Some(base) => PathBuf::from(base).join(&cfg.out_dir),
        None => PathBuf::from(&cfg.out_dir),
    }
}

enum Learner {
    Sac(SacLearner),
    Iql(IqlLearner),
}

impl Learner {
    fn update(
        &mut self,
        pi: &mut GaussianPolicy,
        batch: &Batch,
        gamma: f64,
        rng: &mut adept_core::rng::Rng,
    ) -> Result<(f64, f64, f64)> {
        match self {
            Learner::Sac(l) => {
                let losses = l.update(pi, batch, gamma, rng)?;
                Ok((losses.q_loss, f64::NAN, losses.pi_loss))
            }
            Learner::Iql(l) => {
                let losses = l.update(pi, batch, gamma)?;
                Ok((losses.q_loss, losses.v_loss, losses.pi_loss))
            }
        }
    }
}

/// Runs the full closed loop for `cfg.epochs` epochs:
/// normalize the dataset, estimate the behavior policy, fit the world model
/// to convergence, then per epoch: rollouts into the replay buffer, learner
/// updates on mixed batches, importance-weighted world-model updates, and a
/// true-environment evaluation. With `epochs = 0` only initialization runs
/// and its checkpoint is written.
pub fn run_adept(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if cfg.dataset.is_empty() {
        return Err(Error::Config("config is missing `dataset`".into()));
    }
    let out_dir = resolve_out_dir(cfg);
    fs::create_dir_all(&out_dir)?;
    let config_text = cfg.to_string();
    fs::write(out_dir.join("config.txt"), &config_text)?;
    let mut log = fs::File::create(out_dir.join("run.log"))?;
    let mut metrics = fs::File::create(out_dir.join("metrics.csv"))?;
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;
    let started = Instant::now();

    let mut phases: Vec<String> = Vec::new();
    let phase = |label: String, log: &mut fs::File, phases: &mut Vec<String>| -> Result<()> {
        writeln!(log, "{label}")?;
        log.flush()?;
        phases.push(label);
        Ok(())
    };

    let raw = load_dataset(Path::new(&cfg.dataset))?;
    let (ds, _) = normalize(&raw)?;
    let norm = ds
        .normalizer
        .clone()
        .expect("normalize always records the raw stats");
    let env = ToyEnv::by_name(&ds.env_name)?;
    let bounds = env.action_bounds();
    phase(
        format!(
            "LOAD dataset={} n={} env={} tier={}",
            cfg.dataset,
            ds.len(),
            ds.env_name,
            ds.tier.name()
        ),
        &mut log,
        &mut phases,
    )?;

    // Seed chain: one stream per phase so ablations share the rest.
    let mut rng_bc = derive(cfg.seed, Stream::BehaviorCloning);
    let mut rng_wm = derive(cfg.seed, Stream::WorldModelInit);
    let mut rng_roll = derive(cfg.seed, Stream::Rollout);
    let mut rng_learner = derive(cfg.seed, Stream::Learner);
    let mut rng_eval = derive(cfg.seed, Stream::Eval);
    let mut rng_wm_loop = derive(cfg.seed, Stream::WorldModelLoop);

    let hidden = [cfg.hidden_dim, cfg.hidden_dim];
    let adam = AdamConfig::with_lr(cfg.learning_rate);

    // World model and behavior policy (skipped entirely for dataset-only runs).
    let mut world: Option<(DiffusionWorldModel, DiffusionOptimizers, GaussianPolicy)> = None;
    if cfg.use_synthetic {
        let bc_cfg = BcConfig {
            hidden: hidden.to_vec(),
            learning_rate: cfg.learning_rate,
            batch_size: cfg.policy_batch,
            max_steps: cfg.bc_steps,
            plateau_window: cfg.plateau_window.min(cfg.bc_steps.max(1)),
            plateau_tol: cfg.plateau_tol,
            squash: false,
        };
        let pi_behavior = fit_behavior_policy(&ds, &bounds, &bc_cfg, &mut rng_bc)?;
        phase(
            format!("BC steps<={}", cfg.bc_steps),
            &mut log,
            &mut phases,
        )?;

        let dcfg = DiffusionConfig {
            state_dim: ds.state_dim,
            action_dim: ds.action_dim,
            hidden_dim: cfg.hidden_dim,
            noise_depth: 3,
            reward_depth: 3,
            k_steps: cfg.k_steps,
            cosine_s: cfg.cosine_s,
            guidance_weight: cfg.guidance_weight,
            cond_dropout: cfg.cond_dropout,
        };
        let mut model = DiffusionWorldModel::new(&dcfg, &mut rng_wm)?;
        let mut opt = DiffusionOptimizers::new(&model, adam);
        let iwu_cfg = IwuConfig {
            batch_size: cfg.model_batch,
            weight_clip: cfg.weight_clip_range(),
            include_terminal: true,
        };
        // Until convergence: fixed budget with plateau detection on the
        // windowed mean loss.
        let mut window_sum = 0.0;
        let mut window_n = 0usize;
        let mut prev_avg: Option<f64> = None;
        let mut steps_done = 0usize;
        for step in 0..cfg.wm_init_steps {
            let stats = iwu_step(
                &mut model,
                &mut opt,
                &ds,
                &pi_behavior,
                &pi_behavior,
                &iwu_cfg,
                &mut rng_wm,
            )?;
            steps_done = step + 1;
            window_sum += stats.loss;
            window_n += 1;
            if window_n == cfg.plateau_window.max(1) {
                let avg = window_sum / window_n as f64;
                if let Some(prev) = prev_avg {
                    if (prev - avg) / prev.abs().max(1e-12) < cfg.plateau_tol {
                        break;
                    }
                }
                prev_avg = Some(avg);
                window_sum = 0.0;
                window_n = 0;
            }
        }
        phase(
            format!("WM-INIT steps={steps_done}"),
            &mut log,
            &mut phases,
        )?;
        world = Some((model, opt, pi_behavior));
    }

    // Target policy and learner.
    let mut pi = GaussianPolicy::new(
        ds.state_dim,
        &bounds,
        &hidden,
        cfg.learner == LearnerKind::Sac,
        &mut rng_learner,
    )?;
    let mut learner = match cfg.learner {
        LearnerKind::Sac => Learner::Sac(SacLearner::new(
            ds.state_dim,
            ds.action_dim,
            &hidden,
            &pi,
            SacConfig::default(),
            adam,
            &mut rng_learner,
        )?),
        LearnerKind::Iql => Learner::Iql(IqlLearner::new(
            ds.state_dim,
            ds.action_dim,
            &hidden,
            &pi,
            IqlConfig::default(),
            adam,
            &mut rng_learner,
        )?),
    };

    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let rollout_cfg = RolloutConfig {
        horizon: cfg.horizon,
        clip: cfg.clip_generated,
    };
    let iwu_cfg = IwuConfig {
        batch_size: cfg.model_batch,
        weight_clip: cfg.weight_clip_range(),
        include_terminal: true,
    };

    let mut rows: Vec<MetricsRow> = Vec::with_capacity(cfg.epochs);
    let mut final_eval = (f64::NAN, f64::NAN);
    for epoch in 0..cfg.epochs {
        // Policy evaluation rollouts against the frozen model snapshot.
        if let Some((model, _, _)) = &world {
            for _ in 0..cfg.rollouts_per_epoch {
                let traj =
                    rollout(model, &pi, &ds, rollout_cfg, &mut rng_roll).map_err(Error::from)?;
                buffer.push_trajectory(&traj);
            }
            phase(
                format!("PE x{} (epoch {epoch})", cfg.rollouts_per_epoch),
                &mut log,
                &mut phases,
            )?;
        }

        // Policy improvement on mixed batches.
        let mut acc = (0.0, 0.0, 0.0);
        let mut v_seen = false;
        for _ in 0..cfg.steps_per_epoch {
            let batch = if cfg.use_synthetic && !buffer.is_empty() {
                sample_mixed(&ds, &buffer, cfg.policy_batch, cfg.real_fraction, &mut rng_learner)?
            } else {
                ds.sample_batch(cfg.policy_batch, &mut rng_learner)?
            };
            let (q, v, p) = learner.update(&mut pi, &batch, cfg.gamma, &mut rng_learner)?;
            acc.0 += q;
            if v.is_finite() {
                acc.1 += v;
                v_seen = true;
            }
            acc.2 += p;
        }
        let steps = cfg.steps_per_epoch.max(1) as f64;
        phase(
            format!("POLICY x{} (epoch {epoch})", cfg.steps_per_epoch),
            &mut log,
            &mut phases,
        )?;

        // Importance-weighted model adaptation toward the current policy.
        let mut diffusion_loss = f64::NAN;
        let mut mean_weight = f64::NAN;
        if cfg.importance_sampling {
            if let Some((model, opt, pi_behavior)) = &mut world {
                let mut loss_acc = 0.0;
                let mut w_acc = 0.0;
                for _ in 0..cfg.iwu_steps_per_epoch {
                    let stats = iwu_step(
                        model,
                        opt,
                        &ds,
                        &pi,
                        pi_behavior,
                        &iwu_cfg,
                        &mut rng_wm_loop,
                    )?;
                    loss_acc += stats.loss;
                    w_acc += stats.mean_weight;
                }
                if cfg.iwu_steps_per_epoch > 0 {
                    diffusion_loss = loss_acc / cfg.iwu_steps_per_epoch as f64;
                    mean_weight = w_acc / cfg.iwu_steps_per_epoch as f64;
                }
                phase(
                    format!("IWU x{} (epoch {epoch})", cfg.iwu_steps_per_epoch),
                    &mut log,
                    &mut phases,
                )?;
            }
        }

        let eval = evaluate_policy(&pi, &env, Some(&norm), cfg.eval_episodes, None, &mut rng_eval)?;
        final_eval = (eval.mean, eval.std);
        let row = MetricsRow {
            epoch,
            learner_loss_q: acc.0 / steps,
            learner_loss_v: if v_seen { acc.1 / steps } else { f64::NAN },
            learner_loss_pi: acc.2 / steps,
            diffusion_loss,
            mean_importance_weight: mean_weight,
            eval_return_mean: eval.mean,
            eval_return_std: eval.std,
            wallclock_s: if cfg.wallclock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        writeln!(metrics, "{}", row.csv())?;
        metrics.flush()?;
        rows.push(row);

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            write_checkpoints(&out_dir, &world, &pi, &norm, Some(epoch))?;
        }
    }

    write_checkpoints(&out_dir, &world, &pi, &norm, None)?;
    phase("DONE".to_string(), &mut log, &mut phases)?;

    Ok(RunRecord {
        out_dir,
        config_text,
        build_id: format!("adept {}", env!("CARGO_PKG_VERSION")),
        rows,
        phases,
        final_eval_mean: final_eval.0,
        final_eval_std: final_eval.1,
    })
}

fn write_checkpoints(
    out_dir: &Path,
    world: &Option<(DiffusionWorldModel, DiffusionOptimizers, GaussianPolicy)>,
    pi: &GaussianPolicy,
    norm: &NormStats,
    epoch: Option<usize>,
) -> Result<()> {
    let suffix = match epoch {
        Some(e) => format!("-{e:05}"),
        None => String::new(),
    };
    if let Some((model, _, pi_behavior)) = world {
        let mut entries = model.to_checkpoint();
        entries.extend(pi_behavior.to_checkpoint("pi_behavior"));
        let refs: Vec<(String, &Tensor)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_checkpoint(&out_dir.join(format!("world-model{suffix}.ckpt")), &refs)?;
    }
    let mut entries = pi.to_checkpoint("pi");
    entries.extend(norm.to_tensors("norm"));
    let refs: Vec<(String, &Tensor)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
    save_checkpoint(&out_dir.join(format!("policy{suffix}.ckpt")), &refs)?;
    Ok(())
}

/// Runs one arm per sweep value of a single config key, all sharing the base
/// seed chain, and writes a consolidated comparison CSV.
pub fn run_ablation(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
) -> Result<Vec<RunRecord>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let root = resolve_out_dir(base);
    fs::create_dir_all(&root)?;
    let mut records = Vec::new();
    let mut comparison = String::new();
    writeln!(
        comparison,
        "run_id,param,value,eval_return_mean,eval_return_std"
    )
    .unwrap();
    for value in values {
        let mut cfg = base.clone();
        crate::config::apply_kv(&mut cfg, key, value)?;
        let run_id = format!("{key}={value}");
        cfg.out_dir = root.join(&run_id).to_string_lossy().into_owned();
        // The sub-run resolves its own dir; it is already absolute enough.
        let rec = {
            // Avoid double-prefixing by ADEPT_OUT: the root already honored it.
            let saved = std::env::var_os("ADEPT_OUT");
            std::env::remove_var("ADEPT_OUT");
            let r = run_adept(&cfg);
            if let Some(v) = saved {
                std::env::set_var("ADEPT_OUT", v);
            }
            r?
        };
        writeln!(
            comparison,
            "{run_id},{key},{value},{},{}",
            rec.final_eval_mean, rec.final_eval_std
        )
        .unwrap();
        records.push(rec);
    }
    fs::write(root.join("comparison.csv"), comparison)?;
    Ok(records)
}

/// Long-format export of one or more run directories' metrics:
/// `(run_id, epoch, metric, value)` rows.
pub fn plot_export(run_dirs: &[PathBuf], out: &Path) -> Result<usize> {
    if run_dirs.is_empty() {
        return Err(Error::Config("plot export needs at least one run".into()));
    }
    let mut text = String::from("run_id,epoch,metric,value\n");
    let mut rows = 0usize;
    for dir in run_dirs {
        let run_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.to_string_lossy().into_owned());
        let csv = fs::read_to_string(dir.join("metrics.csv"))
            .map_err(|e| Error::Config(format!("cannot read metrics in {dir:?}: {e}")))?;
        let mut lines = csv.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Truncated("metrics.csv is empty".into()))?
            .split(',')
            .collect();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Truncated(format!(
                    "ragged metrics row in {dir:?}"
                )));
            }
            let epoch = fields[0];
            for (name, value) in header.iter().zip(&fields).skip(1) {
                writeln!(text, "{run_id},{epoch},{name},{value}").unwrap();
                rows += 1;
            }
        }
    }
    fs::write(out, text)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_header_matches_schema() {
        assert_eq!(
            METRICS_HEADER.split(',').count(),
            9,
            "schema must have 9 columns"
        );
        assert!(METRICS_HEADER.starts_with("epoch,"));
        assert!(METRICS_HEADER.ends_with("wallclock_s"));
    }

    #[test]
    fn row_csv_uses_nan_literal_for_missing() {
        let row = MetricsRow {
            epoch: 3,
            learner_loss_q: 0.5,
            learner_loss_v: f64::NAN,
            learner_loss_pi: -1.25,
            diffusion_loss: f64::NAN,
            mean_importance_weight: f64::NAN,
            eval_return_mean: -10.0,
            eval_return_std: 2.0,
            wallclock_s: 0.0,
        };
        let line = row.csv();
        assert_eq!(line, "3,0.5,NaN,-1.25,NaN,NaN,-10,2,0");
        // NaN round-trips through parse.
        assert!("NaN".parse::<f64>().unwrap().is_nan());
    }
}
