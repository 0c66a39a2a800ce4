//! Error quantities, the return-gap bound, and exact inequality checks.

use super::tabular::{exact_return, occupancies, truncation_horizon, TabularMdp, TabularPolicy};
use super::{CHECK_TOL, TAIL_MASS};
use crate::error::{Error, Result};

/// Total-variation distance `0.5 * sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!(
            "tv_distance over supports of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Reward and transition error measured under the occupancy of `(mdp, pi)`:
/// the max over `t <= horizon` of the occupancy-weighted TV distance between
/// the two models' rows.
#[derive(Debug, Clone, Copy)]
pub struct ErrorQuantities {
    pub eps_r: f64,
    pub eps_m: f64,
    /// Truncation horizon used for the occupancy recursion.
    pub horizon: usize,
}

pub fn error_quantities(
    mdp: &TabularMdp,
    model: &TabularMdp,
    pi: &TabularPolicy,
) -> Result<ErrorQuantities> {
    check_shared_support(mdp, model)?;
    let horizon = truncation_horizon(mdp.gamma, TAIL_MASS);
    let occ = occupancies(mdp, pi, horizon);
    let (ns, na) = (mdp.n_states, mdp.n_actions);

    // Per-pair TVs are occupancy-independent; compute once.
    let mut tv_r = vec![0.0; ns * na];
    let mut tv_m = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            tv_r[s * na + a] = tv_distance(&mdp.reward_probs[s][a], &model.reward_probs[s][a])?;
            tv_m[s * na + a] = tv_distance(&mdp.transition[s][a], &model.transition[s][a])?;
        }
    }
    let mut eps_r = 0.0f64;
    let mut eps_m = 0.0f64;
    for joint in &occ {
        let er: f64 = joint.iter().zip(&tv_r).map(|(p, tv)| p * tv).sum();
        let em: f64 = joint.iter().zip(&tv_m).map(|(p, tv)| p * tv).sum();
        eps_r = eps_r.max(er);
        eps_m = eps_m.max(em);
    }
    Ok(ErrorQuantities {
        eps_r,
        eps_m,
        horizon,
    })
}

/// Exact `max_s TV(pi(.|s), pi_phi(.|s))`.
pub fn policy_shift(pi: &TabularPolicy, pi_phi: &TabularPolicy) -> Result<f64> {
    if pi.probs.len() != pi_phi.probs.len() {
        return Err(Error::contract("policies over different state counts"));
    }
    let mut worst = 0.0f64;
    for (p, q) in pi.probs.iter().zip(&pi_phi.probs) {
        worst = worst.max(tv_distance(p, q)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    pub eps_r: f64,
    pub eps_m: f64,
    pub eps_pi: f64,
    pub r_max: f64,
    pub gamma: f64,
}

/// The return-gap bound
/// `C = 2 r_max ((eps_r + 2 eps_pi)/(1 - gamma) + gamma (2 eps_pi + eps_m)/(1 - gamma)^2)`.
pub fn return_gap_bound(b: &BoundInputs) -> f64 {
    let one_minus = 1.0 - b.gamma;
    2.0 * b.r_max
        * ((b.eps_r + 2.0 * b.eps_pi) / one_minus
            + b.gamma * (2.0 * b.eps_pi + b.eps_m) / (one_minus * one_minus))
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    /// Return of `pi` under the reference MDP.
    pub j: f64,
    /// Return of `pi` under the model MDP.
    pub j_hat: f64,
    pub eps_r: f64,
    pub eps_m: f64,
    pub eps_pi: f64,
    pub c: f64,
    pub gap: f64,
    /// `CHECK_TOL` plus the analytic truncation-tail allowance.
    pub tolerance: f64,
    /// `j < j_hat - c - tolerance`.
    pub violated_lower: bool,
    /// `|j - j_hat| > c + tolerance`.
    pub violated_two_sided: bool,
}

/// Computes both returns of the evaluating policy `pi`, the exact error
/// triple (reward and transition error under `(mdp, pi_phi)`, policy shift
/// between `pi` and `pi_phi`), the bound, and the violation flags.
pub fn check_return_bound(
    mdp: &TabularMdp,
    model: &TabularMdp,
    pi: &TabularPolicy,
    pi_phi: &TabularPolicy,
) -> Result<BoundReport> {
    check_same_discount(mdp, model)?;
    let j = exact_return(mdp, pi)?;
    let j_hat = exact_return(model, pi)?;
    let errs = error_quantities(mdp, model, pi_phi)?;
    let eps_pi = policy_shift(pi, pi_phi)?;
    let r_max = mdp.r_max().max(model.r_max());
    let inputs = BoundInputs {
        eps_r: errs.eps_r,
        eps_m: errs.eps_m,
        eps_pi,
        r_max,
        gamma: mdp.gamma,
    };
    let c = return_gap_bound(&inputs);
    // Every discounted time slice of the gap is at most 2 r_max gamma^t, so
    // the steps beyond the truncation horizon contribute at most this much.
    let tail = 2.0 * r_max * mdp.gamma.powi(errs.horizon as i32 + 1) / (1.0 - mdp.gamma);
    let tolerance = CHECK_TOL + tail;
    let gap = j - j_hat;
    Ok(BoundReport {
        j,
        j_hat,
        eps_r: errs.eps_r,
        eps_m: errs.eps_m,
        eps_pi,
        c,
        gap,
        tolerance,
        violated_lower: j < j_hat - c - tolerance,
        violated_two_sided: gap.abs() > c + tolerance,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct InequalityCheck {
    /// Largest `lhs - rhs` observed (negative when comfortably satisfied).
    pub worst_slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone)]
pub struct InequalityReport {
    /// Joint TV bounded by state TV plus worst per-state policy TV, at
    /// every time step.
    pub joint_factorization: InequalityCheck,
    /// Occupancy TV at time t bounded by `t * delta + initial joint TV`.
    pub occupancy_drift: InequalityCheck,
    /// Return gap bounded by the discounted sum of reward error and
    /// occupancy TV terms.
    pub return_decomposition: InequalityCheck,
}

impl InequalityReport {
    pub fn any_violated(&self) -> bool {
        self.joint_factorization.violated
            || self.occupancy_drift.violated
            || self.return_decomposition.violated
    }
}

/// Checks the three supporting inequalities exactly on one instance pair:
/// occupancies under `(mdp, pi)` versus `(model, pi_hat)`.
pub fn check_support_inequalities(
    mdp: &TabularMdp,
    model: &TabularMdp,
    pi: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> Result<InequalityReport> {
    check_shared_support(mdp, model)?;
    check_same_discount(mdp, model)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.gamma;
    let horizon = truncation_horizon(gamma, TAIL_MASS);
    let occ = occupancies(mdp, pi, horizon);
    let occ_hat = occupancies(model, pi_hat, horizon);
    let pol_shift = policy_shift(pi, pi_hat)?;

    // Joint factorization at every step.
    let mut joint_worst = f64::NEG_INFINITY;
    for (joint, joint_hat) in occ.iter().zip(&occ_hat) {
        let lhs = tv_distance(joint, joint_hat)?;
        let sm = state_marginal(joint, ns, na);
        let sm_hat = state_marginal(joint_hat, ns, na);
        let rhs = tv_distance(&sm, &sm_hat)? + pol_shift;
        joint_worst = joint_worst.max(lhs - rhs);
    }

    // Occupancy drift: delta is the worst occupancy-weighted TV between the
    // one-step conditional joints P(s',a'|s,a) of the two pairs.
    let mut cond_tv = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let mut acc = 0.0;
            for s2 in 0..ns {
                for a2 in 0..na {
                    let p = mdp.transition[s][a][s2] * pi.probs[s2][a2];
                    let q = model.transition[s][a][s2] * pi_hat.probs[s2][a2];
                    acc += (p - q).abs();
                }
            }
            cond_tv[s * na + a] = 0.5 * acc;
        }
    }
    let mut delta = 0.0f64;
    for joint in &occ {
        let d: f64 = joint.iter().zip(&cond_tv).map(|(p, tv)| p * tv).sum();
        delta = delta.max(d);
    }
    let initial_tv = tv_distance(&occ[0], &occ_hat[0])?;
    let mut drift_worst = f64::NEG_INFINITY;
    for (t, (joint, joint_hat)) in occ.iter().zip(&occ_hat).enumerate() {
        let lhs = tv_distance(joint, joint_hat)?;
        let rhs = t as f64 * delta + initial_tv;
        drift_worst = drift_worst.max(lhs - rhs);
    }

    // Return decomposition: |J - J_hat| against the discounted sum of
    // reward-error and occupancy-TV terms, with the analytic tail added to
    // the right-hand side.
    let mut tv_r = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            tv_r[s * na + a] = tv_distance(&mdp.reward_probs[s][a], &model.reward_probs[s][a])?;
        }
    }
    let mut eps_r = 0.0f64;
    for joint in &occ {
        let er: f64 = joint.iter().zip(&tv_r).map(|(p, tv)| p * tv).sum();
        eps_r = eps_r.max(er);
    }
    let r_max = mdp.r_max().max(model.r_max());
    let lhs = (exact_return(mdp, pi)? - exact_return(model, pi_hat)?).abs();
    let mut rhs = 0.0;
    let mut disc = 1.0;
    for (joint, joint_hat) in occ.iter().zip(&occ_hat) {
        rhs += disc * r_max * (2.0 * eps_r + 2.0 * tv_distance(joint, joint_hat)?);
        disc *= gamma;
    }
    // Beyond the horizon each side's slice is at most r_max gamma^t, and the
    // omitted rhs terms are nonnegative; allow the full tail.
    let tail = 4.0 * r_max * gamma.powi(horizon as i32 + 1) / (1.0 - gamma);
    let return_worst = lhs - (rhs + tail);

    Ok(InequalityReport {
        joint_factorization: InequalityCheck {
            worst_slack: joint_worst,
            violated: joint_worst > CHECK_TOL,
        },
        occupancy_drift: InequalityCheck {
            worst_slack: drift_worst,
            violated: drift_worst > CHECK_TOL,
        },
        return_decomposition: InequalityCheck {
            worst_slack: return_worst,
            violated: return_worst > CHECK_TOL,
        },
    })
}

fn state_marginal(joint: &[f64], ns: usize, na: usize) -> Vec<f64> {
    let mut out = vec![0.0; ns];
    for s in 0..ns {
        out[s] = joint[s * na..(s + 1) * na].iter().sum();
    }
    out
}

fn check_shared_support(a: &TabularMdp, b: &TabularMdp) -> Result<()> {
    if a.n_states != b.n_states
        || a.n_actions != b.n_actions
        || a.reward_support != b.reward_support
    {
        return Err(Error::contract(
            "models must share state, action, and reward supports",
        ));
    }
    Ok(())
}

fn check_same_discount(a: &TabularMdp, b: &TabularMdp) -> Result<()> {
    if a.gamma != b.gamma {
        return Err(Error::contract("models must share the discount factor"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use crate::bound::instances::{perturb_mdp, perturb_policy, random_mdp, random_policy};
    use crate::rng::seeded;

    #[test]
    fn tv_basic_values() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn tv_is_a_metric_on_random_simplex_triples() {
        use crate::bound::instances::random_simplex;
        let mut rng = seeded(3);
        for _ in 0..300 {
            let n = 2 + (rng.gen_range(0..5usize));
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let r = random_simplex(n, &mut rng);
            let pq = tv_distance(&p, &q).unwrap();
            let qp = tv_distance(&q, &p).unwrap();
            assert!((pq - qp).abs() < 1e-15);
            assert!(tv_distance(&p, &p).unwrap() == 0.0);
            let pr = tv_distance(&p, &r).unwrap();
            let rq = tv_distance(&r, &q).unwrap();
            assert!(pq <= pr + rq + 1e-12);
            assert!((0.0..=1.0).contains(&pq));
        }
    }

    #[test]
    fn identical_models_have_zero_errors() {
        let mut rng = seeded(5);
        let mdp = random_mdp(4, 3, 3, 0.9, &mut rng);
        let pi = random_policy(4, 3, &mut rng);
        let e = error_quantities(&mdp, &mdp, &pi).unwrap();
        assert_eq!(e.eps_r, 0.0);
        assert_eq!(e.eps_m, 0.0);
        assert_eq!(policy_shift(&pi, &pi).unwrap(), 0.0);
    }

    #[test]
    fn transition_mass_shift_at_certain_state_gives_exact_eps() {
        // Deterministic start in state 0, one action: moving 0.1 mass in the
        // (0, a) row yields eps_m = 0.1 exactly at t = 0.
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            reward_probs: vec![vec![vec![1.0]], vec![vec![1.0]]],
            reward_support: vec![1.0],
            initial: vec![1.0, 0.0],
            gamma: 0.5,
        };
        let mut model = mdp.clone();
        model.transition[0][0] = vec![0.4, 0.6];
        let pi = TabularPolicy::uniform(2, 1);
        let e = error_quantities(&mdp, &model, &pi).unwrap();
        assert!((e.eps_m - 0.1).abs() < 1e-12, "eps_m = {}", e.eps_m);
        assert_eq!(e.eps_r, 0.0);
    }

    #[test]
    fn bound_value_trivial_and_hand_cases() {
        let zero = BoundInputs {
            eps_r: 0.0,
            eps_m: 0.0,
            eps_pi: 0.0,
            r_max: 5.0,
            gamma: 0.9,
        };
        assert_eq!(return_gap_bound(&zero), 0.0);

        // 2 * (0.14 / 0.1 + 0.9 * 0.09 / 0.01) = 2 * (1.4 + 8.1) = 19.0.
        let hand = BoundInputs {
            eps_r: 0.1,
            eps_m: 0.05,
            eps_pi: 0.02,
            r_max: 1.0,
            gamma: 0.9,
        };
        assert!((return_gap_bound(&hand) - 19.0).abs() < 1e-12);

        // Linear in r_max.
        let doubled = BoundInputs {
            r_max: 2.0,
            ..hand
        };
        assert!((return_gap_bound(&doubled) - 38.0).abs() < 1e-12);
    }

    #[test]
    fn bound_monotone_in_each_error() {
        let mut rng = seeded(9);
        use rand::Rng as _;
        for _ in 0..200 {
            let base = BoundInputs {
                eps_r: rng.gen_range(0.0..1.0),
                eps_m: rng.gen_range(0.0..1.0),
                eps_pi: rng.gen_range(0.0..1.0),
                r_max: rng.gen_range(0.1..5.0),
                gamma: rng.gen_range(0.1..0.99),
            };
            let c0 = return_gap_bound(&base);
            let bump = rng.gen_range(0.0..0.5);
            for field in 0..4 {
                let mut b = base;
                match field {
                    0 => b.eps_r += bump,
                    1 => b.eps_m += bump,
                    2 => b.eps_pi += bump,
                    _ => b.r_max += bump,
                }
                assert!(return_gap_bound(&b) >= c0 - 1e-12);
            }
        }
    }

    #[test]
    fn identical_instance_has_zero_gap_and_zero_bound() {
        let mut rng = seeded(11);
        let mdp = random_mdp(3, 2, 2, 0.9, &mut rng);
        let pi = random_policy(3, 2, &mut rng);
        let report = check_return_bound(&mdp, &mdp, &pi, &pi).unwrap();
        assert!(report.gap.abs() < 1e-10);
        assert_eq!(report.c, 0.0);
        assert!(!report.violated_lower && !report.violated_two_sided);
    }

    #[test]
    fn randomized_instances_never_violate_bound() {
        let mut rng = seeded(21);
        use rand::Rng as _;
        for trial in 0..200 {
            let ns = rng.gen_range(2..=5);
            let na = rng.gen_range(1..=3);
            let nr = rng.gen_range(1..=3);
            let gamma = if trial % 2 == 0 { 0.5 } else { 0.9 };
            let mdp = random_mdp(ns, na, nr, gamma, &mut rng);
            let model = perturb_mdp(&mdp, 0.3, &mut rng);
            let pi_phi = random_policy(ns, na, &mut rng);
            let pi = perturb_policy(&pi_phi, 0.3, &mut rng);
            let report = check_return_bound(&mdp, &model, &pi, &pi_phi).unwrap();
            assert!(
                !report.violated_two_sided,
                "trial {trial}: gap {} > C {} + tol {}",
                report.gap.abs(),
                report.c,
                report.tolerance
            );
        }
    }

    #[test]
    fn reward_only_perturbation_respects_first_term_alone() {
        let mut rng = seeded(33);
        for trial in 0..100 {
            let gamma = if trial % 2 == 0 { 0.5 } else { 0.9 };
            let mdp = random_mdp(4, 2, 3, gamma, &mut rng);
            let mut model = mdp.clone();
            // Perturb only reward rows.
            for s in 0..4 {
                for a in 0..2 {
                    model.reward_probs[s][a] =
                        crate::bound::instances::mix_row(&mdp.reward_probs[s][a], 0.4, &mut rng);
                }
            }
            let pi = random_policy(4, 2, &mut rng);
            let report = check_return_bound(&mdp, &model, &pi, &pi).unwrap();
            assert_eq!(report.eps_m, 0.0);
            assert_eq!(report.eps_pi, 0.0);
            let r_max = mdp.r_max().max(model.r_max());
            let first_term = 2.0 * r_max * report.eps_r / (1.0 - gamma);
            assert!(
                report.gap.abs() <= first_term + report.tolerance,
                "trial {trial}: gap {} > {first_term}",
                report.gap.abs()
            );
        }
    }

    #[test]
    fn identical_pair_zeroes_all_inequality_lhs() {
        let mut rng = seeded(41);
        let mdp = random_mdp(3, 2, 2, 0.9, &mut rng);
        let pi = random_policy(3, 2, &mut rng);
        let report = check_support_inequalities(&mdp, &mdp, &pi, &pi).unwrap();
        assert!(!report.any_violated());
        // All left sides are exactly zero, so slack = -rhs <= 0.
        assert!(report.joint_factorization.worst_slack <= 0.0);
        assert!(report.occupancy_drift.worst_slack <= 0.0);
        assert!(report.return_decomposition.worst_slack <= 0.0);
    }

    #[test]
    fn single_state_joint_tv_equals_action_tv() {
        // With one state the state marginals always match, so the joint
        // factorization holds with equality.
        let mdp = TabularMdp {
            n_states: 1,
            n_actions: 2,
            transition: vec![vec![vec![1.0], vec![1.0]]],
            reward_probs: vec![vec![vec![1.0], vec![1.0]]],
            reward_support: vec![0.5],
            initial: vec![1.0],
            gamma: 0.5,
        };
        let pi = TabularPolicy {
            probs: vec![vec![0.8, 0.2]],
        };
        let pi_hat = TabularPolicy {
            probs: vec![vec![0.3, 0.7]],
        };
        let report = check_support_inequalities(&mdp, &mdp, &pi, &pi_hat).unwrap();
        // lhs = TV(joint) = TV(policy rows) = 0.5; rhs = 0 + 0.5.
        assert!(report.joint_factorization.worst_slack.abs() < 1e-12);
        assert!(!report.any_violated());
    }

    #[test]
    fn randomized_instances_never_violate_inequalities() {
        let mut rng = seeded(55);
        use rand::Rng as _;
        for trial in 0..200 {
            let ns = rng.gen_range(2..=5);
            let na = rng.gen_range(1..=3);
            let nr = rng.gen_range(1..=3);
            let gamma = if trial % 2 == 0 { 0.5 } else { 0.9 };
            let mdp = random_mdp(ns, na, nr, gamma, &mut rng);
            let model = perturb_mdp(&mdp, 0.4, &mut rng);
            let pi = random_policy(ns, na, &mut rng);
            let pi_hat = perturb_policy(&pi, 0.4, &mut rng);
            let report = check_support_inequalities(&mdp, &model, &pi, &pi_hat).unwrap();
            assert!(!report.any_violated(), "trial {trial}: {report:?}");
        }
    }
}
