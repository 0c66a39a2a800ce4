//! Randomized bound-verification trials behind the `verify-bounds` command
//! and the acceptance suite.

use std::fmt::Write as _;

use adept_core::bound::instances::{perturb_mdp, perturb_policy, random_mdp, random_policy};
use adept_core::bound::{check_return_bound, check_support_inequalities, BoundReport};
use adept_core::error::Result;
use adept_core::rng::{derive, Stream};
use rand::Rng as _;

#[derive(Debug, Clone, Copy)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    pub gamma: f64,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_rewards: usize,
    /// Row-mixing strength for model and policy perturbations.
    pub strength: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            trials: 1000,
            seed: 7,
            gamma: 0.9,
            max_states: 5,
            max_actions: 3,
            max_rewards: 3,
            strength: 0.3,
        }
    }
}

pub struct TrialOutcome {
    pub reports: Vec<BoundReport>,
    pub violations: usize,
}

/// Runs randomized return-bound trials: random MDP, perturbed model,
/// random target policy, perturbed evaluating policy.
pub fn run_bound_trials(cfg: &TrialConfig) -> Result<TrialOutcome> {
    let mut rng = derive(cfg.seed, Stream::Verify);
    let mut reports = Vec::with_capacity(cfg.trials);
    let mut violations = 0usize;
    for _ in 0..cfg.trials {
        let ns = rng.gen_range(2..=cfg.max_states.max(2));
        let na = rng.gen_range(1..=cfg.max_actions.max(1));
        let nr = rng.gen_range(1..=cfg.max_rewards.max(1));
        let mdp = random_mdp(ns, na, nr, cfg.gamma, &mut rng);
        let model = perturb_mdp(&mdp, cfg.strength, &mut rng);
        let pi_phi = random_policy(ns, na, &mut rng);
        let pi = perturb_policy(&pi_phi, cfg.strength, &mut rng);
        let report = check_return_bound(&mdp, &model, &pi, &pi_phi)?;
        if report.violated_two_sided || report.violated_lower {
            violations += 1;
        }
        reports.push(report);
    }
    Ok(TrialOutcome {
        reports,
        violations,
    })
}

/// Counts violations of the three supporting inequalities over randomized
/// instance pairs.
pub fn run_inequality_trials(cfg: &TrialConfig) -> Result<usize> {
    let mut rng = derive(cfg.seed, Stream::Verify);
    let mut violations = 0usize;
    for _ in 0..cfg.trials {
        let ns = rng.gen_range(2..=cfg.max_states.max(2));
        let na = rng.gen_range(1..=cfg.max_actions.max(1));
        let nr = rng.gen_range(1..=cfg.max_rewards.max(1));
        let mdp = random_mdp(ns, na, nr, cfg.gamma, &mut rng);
        let model = perturb_mdp(&mdp, cfg.strength, &mut rng);
        let pi = random_policy(ns, na, &mut rng);
        let pi_hat = perturb_policy(&pi, cfg.strength, &mut rng);
        let report = check_support_inequalities(&mdp, &model, &pi, &pi_hat)?;
        if report.any_violated() {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Report CSV: one row per trial.
pub fn report_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from("trial,J,J_hat,eps_r,eps_m,eps_pi,C,gap,violated\n");
    for (i, r) in reports.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{}",
            r.j,
            r.j_hat,
            r.eps_r,
            r.eps_m,
            r.eps_pi,
            r.c,
            r.gap,
            if r.violated_two_sided || r.violated_lower {
                1
            } else {
                0
            }
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_trial_batch_has_no_violations() {
        let cfg = TrialConfig {
            trials: 50,
            ..TrialConfig::default()
        };
        let outcome = run_bound_trials(&cfg).unwrap();
        assert_eq!(outcome.violations, 0);
        assert_eq!(outcome.reports.len(), 50);
        let csv = report_csv(&outcome.reports);
        assert_eq!(csv.lines().count(), 51);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
    }

    #[test]
    fn trials_are_reproducible_by_seed() {
        let cfg = TrialConfig {
            trials: 10,
            ..TrialConfig::default()
        };
        let a = run_bound_trials(&cfg).unwrap();
        let b = run_bound_trials(&cfg).unwrap();
        for (x, y) in a.reports.iter().zip(&b.reports) {
            assert_eq!(x.j, y.j);
            assert_eq!(x.c, y.c);
        }
    }
}
