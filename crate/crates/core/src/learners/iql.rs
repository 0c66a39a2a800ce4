//! Expectile-regression learner: a state-value net trained toward the
//! tau-expectile of the target critics, critics bootstrapped through the
//! value net, and advantage-weighted regression for the policy.

use super::CriticPair;
use crate::adam::{AdamConfig, AdamState};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{apply_param_grads, Activation, MlpBinding, MlpParams};
use crate::policy::{log_prob_tape, GaussianPolicy};
use crate::rng::Rng;
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy)]
pub struct IqlConfig {
    /// Expectile level of the value regression.
    pub expectile_tau: f64,
    /// Inverse temperature of the advantage weights.
    pub beta: f64,
    /// Cap on `exp(beta * advantage)`.
    pub adv_weight_cap: f64,
    /// Target-network soft-update rate.
    pub soft_update: f64,
}

impl Default for IqlConfig {
    fn default() -> Self {
        IqlConfig {
            expectile_tau: 0.7,
            beta: 3.0,
            adv_weight_cap: 100.0,
            soft_update: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IqlLosses {
    pub v_loss: f64,
    pub q_loss: f64,
    pub pi_loss: f64,
}

#[derive(Debug, Clone)]
pub struct IqlLearner {
    pub value: MlpParams,
    pub critics: CriticPair,
    pub cfg: IqlConfig,
    opt_v: AdamState,
    opt_q: AdamState,
    opt_pi: AdamState,
}

impl IqlLearner {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        policy: &GaussianPolicy,
        cfg: IqlConfig,
        adam: AdamConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(cfg.expectile_tau > 0.0 && cfg.expectile_tau < 1.0) {
            return Err(Error::contract("expectile tau must lie in (0, 1)"));
        }
        if !(cfg.beta > 0.0) {
            return Err(Error::contract("beta must be positive"));
        }
        let mut vwidths = vec![state_dim];
        vwidths.extend_from_slice(hidden);
        vwidths.push(1);
        let mut vacts = vec![Activation::Relu; hidden.len()];
        vacts.push(Activation::Identity);
        let value = MlpParams::new(&vwidths, &vacts, rng)?;
        let critics = CriticPair::new(state_dim, action_dim, hidden, cfg.soft_update, rng)?;
        let opt_v = AdamState::new(adam, &value.tensors());
        let mut q_tensors = critics.q1.tensors();
        q_tensors.extend(critics.q2.tensors());
        let opt_q = AdamState::new(adam, &q_tensors);
        let opt_pi = AdamState::new(adam, &policy.tensors());
        Ok(IqlLearner {
            value,
            critics,
            cfg,
            opt_v,
            opt_q,
            opt_pi,
        })
    }

    /// One gradient step on value, critics, and policy, then a target soft
    /// update.
    pub fn update(
        &mut self,
        pi: &mut GaussianPolicy,
        batch: &Batch,
        gamma: f64,
    ) -> Result<IqlLosses> {
        let n = batch.len;
        if n == 0 {
            return Err(Error::contract("iql update on an empty batch"));
        }
        let (sd, ad) = (batch.state_dim, batch.action_dim);

        // Value net toward the tau-expectile of min target-Q on dataset actions.
        let tq = self
            .critics
            .target_min(&batch.states, &batch.actions, n, sd, ad)?;
        let v_loss = {
            let mut tape = Tape::new();
            let s = tape.constant(n, sd, batch.states.clone())?;
            let vb = MlpBinding::trainable(&mut tape, &self.value);
            let v = vb.apply(&mut tape, s)?;
            let t = tape.constant(n, 1, tq.clone())?;
            let u = tape.sub(t, v)?;
            let l = tape.expectile(u, self.cfg.expectile_tau);
            let loss = tape.mean_all(l);
            let value = tape.value(loss)[0];
            let grads = tape.backward(loss)?;
            let mut tensors = self.value.tensors_mut();
            apply_param_grads(&mut tensors, grads, false)?;
            self.opt_v.step(&mut tensors)?;
            value
        };

        // Critics toward r + gamma (1 - done) V(s').
        let v_next = self.value.forward_batch(&batch.next_states, n)?;
        let targets: Vec<f64> = (0..n)
            .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * v_next[i])
            .collect();
        let q_loss = {
            let mut tape = Tape::new();
            let rows = CriticPair::join_rows(&batch.states, &batch.actions, n, sd, ad);
            let input = tape.constant(n, sd + ad, rows)?;
            let b1 = MlpBinding::trainable(&mut tape, &self.critics.q1);
            let b2 = MlpBinding::trainable(&mut tape, &self.critics.q2);
            let t = tape.constant(n, 1, targets)?;
            let q1 = b1.apply(&mut tape, input)?;
            let q2 = b2.apply(&mut tape, input)?;
            let d1 = tape.sub(q1, t)?;
            let e1 = tape.mul(d1, d1)?;
            let d2 = tape.sub(q2, t)?;
            let e2 = tape.mul(d2, d2)?;
            let s1 = tape.sum_all(e1);
            let s2 = tape.sum_all(e2);
            let total = tape.add(s1, s2)?;
            let loss = tape.scale(total, 1.0 / n as f64);
            let value = tape.value(loss)[0];
            let grads = tape.backward(loss)?;
            let mut tensors = self.critics.q1.tensors_mut();
            tensors.extend(self.critics.q2.tensors_mut());
            apply_param_grads(&mut tensors, grads, false)?;
            self.opt_q.step(&mut tensors)?;
            value
        };

        // Advantage-weighted regression on dataset actions.
        let v_s = self.value.forward_batch(&batch.states, n)?;
        let adv: Vec<f64> = tq.iter().zip(&v_s).map(|(q, v)| q - v).collect();
        let weights = advantage_weights(&adv, self.cfg.beta, self.cfg.adv_weight_cap)?;
        let pi_loss = {
            let mut tape = Tape::new();
            let s = tape.constant(n, sd, batch.states.clone())?;
            let pb = MlpBinding::trainable(&mut tape, pi.net());
            let logp = log_prob_tape(&mut tape, &pb, pi, s, &batch.actions)?;
            let w = tape.constant(n, 1, weights)?;
            let weighted = tape.scale_rows(logp, w)?;
            let total = tape.sum_all(weighted);
            let loss = tape.scale(total, -1.0 / n as f64);
            let value = tape.value(loss)[0];
            let grads = tape.backward(loss)?;
            let mut tensors = pi.tensors_mut();
            apply_param_grads(&mut tensors, grads, false)?;
            self.opt_pi.step(&mut tensors)?;
            value
        };

        self.critics.soft_update();
        Ok(IqlLosses {
            v_loss,
            q_loss,
            pi_loss,
        })
    }
}

/// `min(exp(beta * adv), cap)` per item; errors on non-finite weights.
pub fn advantage_weights(adv: &[f64], beta: f64, cap: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(adv.len());
    for (i, a) in adv.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::contract(format!(
                "non-finite advantage on sample {i} ({a})"
            )));
        }
        let w = (beta * a).exp().min(cap);
        if !w.is_finite() {
            return Err(Error::contract(format!(
                "non-finite advantage weight on sample {i} (advantage {a})"
            )));
        }
        out.push(w);
    }
    Ok(out)
}
