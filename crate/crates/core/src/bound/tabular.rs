//! Enumerable MDPs with finite reward supports, exact discounted returns,
//! and time-indexed state-action occupancies.

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// MDP with finite states and actions. Rewards are distributions over a
/// shared finite support, so deterministic rewards are point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s2]`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward_probs[s][a][i]` over `reward_support[i]`.
    pub reward_probs: Vec<Vec<Vec<f64>>>,
    pub reward_support: Vec<f64>,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract("gamma must lie in (0, 1)"));
        }
        if self.initial.len() != self.n_states {
            return Err(Error::shape(
                "initial distribution",
                &[self.n_states],
                &[self.initial.len()],
            ));
        }
        check_distribution(&self.initial, "initial distribution")?;
        for s in 0..self.n_states {
            if self.transition[s].len() != self.n_actions
                || self.reward_probs[s].len() != self.n_actions
            {
                return Err(Error::contract(format!("state {s} has missing action rows")));
            }
            for a in 0..self.n_actions {
                if self.transition[s][a].len() != self.n_states {
                    return Err(Error::shape(
                        format!("transition row ({s},{a})"),
                        &[self.n_states],
                        &[self.transition[s][a].len()],
                    ));
                }
                if self.reward_probs[s][a].len() != self.reward_support.len() {
                    return Err(Error::shape(
                        format!("reward row ({s},{a})"),
                        &[self.reward_support.len()],
                        &[self.reward_probs[s][a].len()],
                    ));
                }
                check_distribution(&self.transition[s][a], "transition row")?;
                check_distribution(&self.reward_probs[s][a], "reward row")?;
            }
        }
        Ok(())
    }

    /// Largest reward magnitude on the support.
    pub fn r_max(&self) -> f64 {
        self.reward_support
            .iter()
            .map(|r| r.abs())
            .fold(0.0, f64::max)
    }

    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.reward_probs[s][a]
            .iter()
            .zip(&self.reward_support)
            .map(|(p, r)| p * r)
            .sum()
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| *v < 0.0) {
        return Err(Error::contract(format!("{what} has negative mass")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::contract(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Action probabilities per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.probs.len() != n_states {
            return Err(Error::shape("policy rows", &[n_states], &[self.probs.len()]));
        }
        for row in &self.probs {
            if row.len() != n_actions {
                return Err(Error::shape("policy row", &[n_actions], &[row.len()]));
            }
            check_distribution(row, "policy row")?;
        }
        Ok(())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }
}

/// Exact infinite-horizon discounted return: solves
/// `(I - gamma P_pi) V = R_pi` directly and takes the initial-state average.
pub fn exact_return(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    mdp.validate()?;
    pi.validate(mdp.n_states, mdp.n_actions)?;
    let n = mdp.n_states;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        for act in 0..mdp.n_actions {
            let p = pi.probs[s][act];
            b[s] += p * mdp.expected_reward(s, act);
            for s2 in 0..n {
                a[s * n + s2] -= mdp.gamma * p * mdp.transition[s][act][s2];
            }
        }
        a[s * n + s] += 1.0;
    }
    let v = solve_linear(&mut a, &mut b, n)?;
    Ok(mdp.initial.iter().zip(&v).map(|(mu, vs)| mu * vs).sum())
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut best = col;
        let mut best_abs = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best_abs {
                best = row;
                best_abs = v;
            }
        }
        if best_abs < 1e-300 {
            return Err(Error::NonFinite("singular linear system".into()));
        }
        if best != col {
            for j in 0..n {
                a.swap(col * n + j, best * n + j);
            }
            b.swap(col, best);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Time horizon after which the discounted tail mass drops below `tail`.
pub fn truncation_horizon(gamma: f64, tail: f64) -> usize {
    (tail.ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// State-action occupancies `P_t(s, a)` for `t = 0..=horizon`, flattened as
/// `s * n_actions + a`.
pub fn occupancies(mdp: &TabularMdp, pi: &TabularPolicy, horizon: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut state_dist = mdp.initial.clone();
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let mut joint = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                joint[s * na + a] = state_dist[s] * pi.probs[s][a];
            }
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let mass = joint[s * na + a];
                if mass == 0.0 {
                    continue;
                }
                for s2 in 0..ns {
                    next[s2] += mass * mdp.transition[s][a][s2];
                }
            }
        }
        out.push(joint);
        state_dist = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single state, single action, reward 1.
    fn trivial_mdp(gamma: f64) -> TabularMdp {
        TabularMdp {
            n_states: 1,
            n_actions: 1,
            transition: vec![vec![vec![1.0]]],
            reward_probs: vec![vec![vec![1.0]]],
            reward_support: vec![1.0],
            initial: vec![1.0],
            gamma,
        }
    }

    #[test]
    fn geometric_series_return() {
        let mdp = trivial_mdp(0.9);
        let pi = TabularPolicy::uniform(1, 1);
        let j = exact_return(&mdp, &pi).unwrap();
        assert!((j - 10.0).abs() < 1e-10);
    }

    #[test]
    fn zero_rewards_zero_return() {
        let mut mdp = trivial_mdp(0.5);
        mdp.reward_support = vec![0.0];
        let pi = TabularPolicy::uniform(1, 1);
        assert_eq!(exact_return(&mdp, &pi).unwrap(), 0.0);
    }

    #[test]
    fn two_state_chain_hand_unrolled() {
        // State 0 pays 1 and moves to absorbing state 1 paying 0;
        // gamma = 0.5, start in 0: J = 1 + 0.5 * 0 = 1.
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            reward_probs: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            reward_support: vec![0.0, 1.0],
            initial: vec![1.0, 0.0],
            gamma: 0.5,
        };
        let pi = TabularPolicy::uniform(2, 1);
        let j = exact_return(&mdp, &pi).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancies_sum_to_one_each_step() {
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 2,
            transition: vec![
                vec![vec![0.3, 0.7], vec![0.9, 0.1]],
                vec![vec![0.5, 0.5], vec![0.2, 0.8]],
            ],
            reward_probs: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            ],
            reward_support: vec![0.0, 1.0],
            initial: vec![0.6, 0.4],
            gamma: 0.9,
        };
        let pi = TabularPolicy {
            probs: vec![vec![0.25, 0.75], vec![0.5, 0.5]],
        };
        for joint in occupancies(&mdp, &pi, 25) {
            let sum: f64 = joint.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_horizon_bounds_tail() {
        for gamma in [0.5, 0.9, 0.99] {
            let t = truncation_horizon(gamma, 1e-10);
            assert!(gamma.powi(t as i32) < 1e-10);
            assert!(gamma.powi(t as i32 - 1) >= 1e-10 * gamma);
        }
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut mdp = trivial_mdp(0.9);
        mdp.transition[0][0] = vec![0.9];
        assert!(matches!(mdp.validate(), Err(Error::Contract(_))));
        let mdp = trivial_mdp(1.0);
        assert!(mdp.validate().is_err());
    }

    #[test]
    fn return_matches_truncated_monte_carlo() {
        use rand::Rng as _;
        let mdp = TabularMdp {
            n_states: 3,
            n_actions: 2,
            transition: vec![
                vec![vec![0.2, 0.5, 0.3], vec![0.7, 0.2, 0.1]],
                vec![vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]],
                vec![vec![0.5, 0.25, 0.25], vec![0.1, 0.1, 0.8]],
            ],
            reward_probs: vec![
                vec![vec![0.2, 0.8], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.3, 0.7]],
                vec![vec![0.9, 0.1], vec![0.0, 1.0]],
            ],
            reward_support: vec![0.0, 1.0],
            initial: vec![1.0, 0.0, 0.0],
            gamma: 0.9,
        };
        let pi = TabularPolicy {
            probs: vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.1, 0.9]],
        };
        let exact = exact_return(&mdp, &pi).unwrap();

        let mut rng = crate::rng::seeded(13);
        let horizon = truncation_horizon(0.9, 1e-8);
        let episodes = 30_000;
        let draw = |p: &[f64], rng: &mut crate::rng::Rng| -> usize {
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut total = 0.0;
        let mut sq_total = 0.0;
        for _ in 0..episodes {
            let mut s = draw(&mdp.initial, &mut rng);
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = draw(&pi.probs[s], &mut rng);
                let ri = draw(&mdp.reward_probs[s][a], &mut rng);
                ret += disc * mdp.reward_support[ri];
                disc *= mdp.gamma;
                s = draw(&mdp.transition[s][a], &mut rng);
            }
            total += ret;
            sq_total += ret * ret;
        }
        let mean = total / episodes as f64;
        let var = sq_total / episodes as f64 - mean * mean;
        let se = (var / episodes as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se + 1e-6,
            "mc {mean} vs exact {exact} (se {se})"
        );
    }
}
