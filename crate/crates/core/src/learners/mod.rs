//! Offline policy-improvement backends: a soft actor-critic and an
//! expectile-regression learner with advantage-weighted extraction, plus
//! true-environment evaluation.

mod eval;
mod iql;
mod sac;

pub use eval::{evaluate_policy, EvalStats};
pub use iql::{advantage_weights, IqlConfig, IqlLearner, IqlLosses};
pub use sac::{SacConfig, SacLearner, SacLosses};

use rand::Rng as _;

use crate::error::Result;
use crate::nn::{Activation, MlpParams};
use crate::rng::Rng;
use crate::tensor::expectile_weight;

/// Asymmetric squared loss `|tau - 1[u < 0]| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Twin Q networks with Polyak-averaged target copies.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    /// Soft-update rate: `target <- (1 - rho) target + rho online`.
    pub rho: f64,
}

impl CriticPair {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rho: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        let q1 = MlpParams::new(&widths, &acts, rng)?;
        let q2 = MlpParams::new(&widths, &acts, rng)?;
        Ok(CriticPair {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            rho,
        })
    }

    /// Row-major `[s | a]` input matrix for `n` pairs.
    pub(crate) fn join_rows(
        states: &[f64],
        actions: &[f64],
        n: usize,
        state_dim: usize,
        action_dim: usize,
    ) -> Vec<f64> {
        let mut rows = Vec::with_capacity(n * (state_dim + action_dim));
        for i in 0..n {
            rows.extend_from_slice(&states[i * state_dim..(i + 1) * state_dim]);
            rows.extend_from_slice(&actions[i * action_dim..(i + 1) * action_dim]);
        }
        rows
    }

    /// Elementwise minimum of the two target critics.
    pub fn target_min(
        &self,
        states: &[f64],
        actions: &[f64],
        n: usize,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Vec<f64>> {
        let rows = Self::join_rows(states, actions, n, state_dim, action_dim);
        let t1 = self.q1_target.forward_batch(&rows, n)?;
        let t2 = self.q2_target.forward_batch(&rows, n)?;
        Ok(t1.iter().zip(&t2).map(|(a, b)| a.min(*b)).collect())
    }

    /// Elementwise minimum of the two online critics.
    pub fn online_min(
        &self,
        states: &[f64],
        actions: &[f64],
        n: usize,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Vec<f64>> {
        let rows = Self::join_rows(states, actions, n, state_dim, action_dim);
        let t1 = self.q1.forward_batch(&rows, n)?;
        let t2 = self.q2.forward_batch(&rows, n)?;
        Ok(t1.iter().zip(&t2).map(|(a, b)| a.min(*b)).collect())
    }

    /// Polyak update of both target networks toward the online networks.
    pub fn soft_update(&mut self) {
        let rho = self.rho;
        for (target, online) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)]
        {
            let online_tensors = online.tensors();
            for (t, o) in target.tensors_mut().into_iter().zip(online_tensors) {
                for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                    *tv = (1.0 - rho) * *tv + rho * ov;
                }
            }
        }
    }
}

/// Draws a standard-normal matrix row-major, one row per batch item.
pub(crate) fn normal_matrix(n: usize, d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n * d)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}
