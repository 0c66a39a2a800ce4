//! Reproducible random instances: flat-Dirichlet rows for every
//! distribution, perturbations by bounded row mixing.

use rand::Rng as _;

use super::tabular::{TabularMdp, TabularPolicy};
use crate::rng::Rng;

/// Uniform draw from the probability simplex (normalized unit-exponential
/// coordinates).
pub fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            -(1.0 - u).ln()
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    if sum == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    for d in &mut draws {
        *d /= sum;
    }
    normalize_exact(&mut draws);
    draws
}

/// Forces the row to sum to 1 exactly in floating point by assigning the
/// residual to the largest entry.
fn normalize_exact(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    let imax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    row[imax] += 1.0 - sum;
    if row[imax] < 0.0 {
        row[imax] = 0.0;
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Random MDP with the given sizes, reward support uniform in [0, 1].
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    n_rewards: usize,
    gamma: f64,
    rng: &mut Rng,
) -> TabularMdp {
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| random_simplex(n_states, rng))
                .collect()
        })
        .collect();
    let reward_probs = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| random_simplex(n_rewards, rng))
                .collect()
        })
        .collect();
    let mut reward_support: Vec<f64> = (0..n_rewards).map(|_| rng.gen_range(0.0..1.0)).collect();
    reward_support.sort_by(|a, b| a.partial_cmp(b).unwrap());
    TabularMdp {
        n_states,
        n_actions,
        transition,
        reward_probs,
        reward_support,
        initial: random_simplex(n_states, rng),
        gamma,
    }
}

pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut Rng) -> TabularPolicy {
    TabularPolicy {
        probs: (0..n_states)
            .map(|_| random_simplex(n_actions, rng))
            .collect(),
    }
}

/// `(1 - lambda) row + lambda random_row` with `lambda ~ U[0, strength]`.
pub fn mix_row(row: &[f64], strength: f64, rng: &mut Rng) -> Vec<f64> {
    let lambda = rng.gen_range(0.0..strength);
    let other = random_simplex(row.len(), rng);
    let mut out: Vec<f64> = row
        .iter()
        .zip(&other)
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    normalize_exact(&mut out);
    out
}

/// Perturbs every transition and reward row by bounded mixing; keeps the
/// initial distribution, support, and discount shared with the original.
pub fn perturb_mdp(mdp: &TabularMdp, strength: f64, rng: &mut Rng) -> TabularMdp {
    let mut out = mdp.clone();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.transition[s][a] = mix_row(&mdp.transition[s][a], strength, rng);
            out.reward_probs[s][a] = mix_row(&mdp.reward_probs[s][a], strength, rng);
        }
    }
    out
}

pub fn perturb_policy(pi: &TabularPolicy, strength: f64, rng: &mut Rng) -> TabularPolicy {
    TabularPolicy {
        probs: pi
            .probs
            .iter()
            .map(|row| mix_row(row, strength, rng))
            .collect(),
    }
}
