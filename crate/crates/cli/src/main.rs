//! `adept` command line: dataset generation, world-model training, full
//! closed-loop runs, ablation sweeps, policy evaluation, bound
//! verification, and plot export.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/file error,
//! 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adept_core::checkpoint::load_checkpoint;
use adept_core::env::{generate_dataset, save_dataset, GenConfig, NormStats, Tier, ToyEnv};
use adept_core::error::Error;
use adept_core::learners::evaluate_policy;
use adept_core::policy::GaussianPolicy;
use adept_core::rng::{derive, seeded, Stream};

use adept_cli::config::{apply_kv, load_config, ExperimentConfig};
use adept_cli::harness::{plot_export, run_ablation, run_adept};
use adept_cli::verify::{report_csv, run_bound_trials, run_inequality_trials, TrialConfig};

#[derive(Parser)]
#[command(name = "adept", about = "Closed-loop offline RL with an adaptive diffusion world model", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tiered offline dataset from a toy environment.
    GenData {
        #[arg(long)]
        env: String,
        #[arg(long)]
        tier: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Online-training budget behind the medium/mixed tiers.
        #[arg(long)]
        gen_steps: Option<usize>,
    },
    /// Fit the behavior policy and initialize the world model only.
    TrainWm {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` overrides, applied in order.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the full closed loop from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Sweep one config key over several values.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Sweep spec `key=v1,v2,...`.
        #[arg(long)]
        sweep: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a saved policy checkpoint in its environment.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Randomized verification of the return-gap bound.
    VerifyBounds {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the supporting-inequality suites.
        #[arg(long, default_value_t = false)]
        lemmas: bool,
    },
    /// Merge run metrics into one long-format CSV for plotting.
    PlotExport {
        /// Comma-separated run directories.
        #[arg(long)]
        runs: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated(_)
        | Error::TrailingData(_) => 3,
        Error::NonFinite(_)
        | Error::Generation { .. }
        | Error::Shape { .. }
        | Error::Contract(_) => 4,
    }
}

fn parse_set(s: &str) -> Result<(String, String), Error> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {s:?}")))
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            env,
            tier,
            n,
            seed,
            out,
            gen_steps,
        } => {
            let env = ToyEnv::by_name(&env)?;
            let tier = Tier::by_name(&tier)?;
            let mut gen_cfg = GenConfig::default();
            if let Some(steps) = gen_steps {
                gen_cfg.online_steps = steps;
            }
            let mut rng = derive(seed, Stream::Dataset);
            let ds = generate_dataset(&env, tier, n, &gen_cfg, &mut rng)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} transitions ({} tier, env {}) to {}",
                ds.len(),
                ds.tier.name(),
                ds.env_name,
                out.display()
            );
            Ok(())
        }
        Command::TrainWm {
            dataset,
            config,
            sets,
            out_dir,
        } => {
            let mut cfg = match config {
                Some(path) => load_config(&path)?,
                None => ExperimentConfig::desk(),
            };
            cfg.dataset = dataset.to_string_lossy().into_owned();
            cfg.epochs = 0; // initialization only
            if let Some(dir) = out_dir {
                cfg.out_dir = dir.to_string_lossy().into_owned();
            }
            for s in &sets {
                let (k, v) = parse_set(s)?;
                apply_kv(&mut cfg, &k, &v)?;
            }
            let rec = run_adept(&cfg)?;
            println!(
                "world model initialized; checkpoints in {}",
                rec.out_dir.display()
            );
            Ok(())
        }
        Command::Run { config, sets } => {
            let mut cfg = load_config(&config)?;
            for s in &sets {
                let (k, v) = parse_set(s)?;
                apply_kv(&mut cfg, &k, &v)?;
            }
            let rec = run_adept(&cfg)?;
            println!(
                "run complete: {} epochs, final eval return {:.3} +- {:.3}, outputs in {}",
                rec.rows.len(),
                rec.final_eval_mean,
                rec.final_eval_std,
                rec.out_dir.display()
            );
            Ok(())
        }
        Command::Ablate {
            config,
            sweep,
            sets,
        } => {
            let mut base = load_config(&config)?;
            for s in &sets {
                let (k, v) = parse_set(s)?;
                apply_kv(&mut base, &k, &v)?;
            }
            let (key, values) = sweep
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad sweep spec {sweep:?}")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let records = run_ablation(&base, key.trim(), &values)?;
            for rec in &records {
                println!(
                    "{}: final eval return {:.3} +- {:.3}",
                    rec.out_dir.display(),
                    rec.final_eval_mean,
                    rec.final_eval_std
                );
            }
            Ok(())
        }
        Command::Eval {
            policy,
            env,
            episodes,
            seed,
        } => {
            let entries = load_checkpoint(&policy)?;
            let pi = GaussianPolicy::from_checkpoint(&entries, "pi")?;
            let norm = NormStats::from_tensors(&entries, "norm").ok();
            let env = ToyEnv::by_name(&env)?;
            let mut rng = seeded(seed);
            let stats = evaluate_policy(&pi, &env, norm.as_ref(), episodes, None, &mut rng)?;
            println!(
                "mean return {:.4} +- {:.4} over {} episodes",
                stats.mean, stats.std, episodes
            );
            Ok(())
        }
        Command::VerifyBounds {
            trials,
            seed,
            gamma,
            out,
            lemmas,
        } => {
            let cfg = TrialConfig {
                trials,
                seed,
                gamma,
                ..TrialConfig::default()
            };
            let outcome = run_bound_trials(&cfg)?;
            println!(
                "return bound: {}/{} trials violated",
                outcome.violations, trials
            );
            if let Some(path) = out {
                std::fs::write(&path, report_csv(&outcome.reports))?;
                println!("report written to {}", path.display());
            }
            if lemmas {
                let v = run_inequality_trials(&cfg)?;
                println!("supporting inequalities: {v}/{trials} trials violated");
                if v > 0 {
                    return Err(Error::NonFinite(
                        "inequality violations detected".into(),
                    ));
                }
            }
            if outcome.violations > 0 {
                return Err(Error::NonFinite("bound violations detected".into()));
            }
            Ok(())
        }
        Command::PlotExport { runs, out } => {
            let dirs: Vec<PathBuf> = runs.split(',').map(|s| PathBuf::from(s.trim())).collect();
            let rows = plot_export(&dirs, &out)?;
            println!("wrote {rows} series rows to {}", out.display());
            Ok(())
        }
    }
}
