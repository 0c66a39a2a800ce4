//! State-conditional diagonal Gaussian policies.
//!
//! One network maps a state to per-dimension means and log standard
//! deviations. The squashed variant pushes samples through tanh and rescales
//! into the action bounds, with the exact change-of-variables correction in
//! its log-density; the plain variant samples the Gaussian directly and only
//! clips when asked for an executable action.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpBinding, MlpParams};
use crate::rng::Rng;
use crate::tensor::{softplus, NodeId, Tape, Tensor};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Pre-squash inversion clips |a_unit| at 1 - this to keep atanh finite.
const ATANH_MARGIN: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    net: MlpParams,
    squash: bool,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl GaussianPolicy {
    /// Network output is `[mean | log_std]`, both of action dimension.
    pub fn new(
        state_dim: usize,
        bounds: &[(f64, f64)],
        hidden: &[usize],
        squash: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let action_dim = bounds.len();
        if action_dim == 0 {
            return Err(Error::contract("policy needs at least one action dim"));
        }
        for (lo, hi) in bounds {
            if !(lo < hi) {
                return Err(Error::contract(format!("bad action bound ({lo}, {hi})")));
            }
        }
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Ok(GaussianPolicy {
            net: MlpParams::new(&widths, &acts, rng)?,
            squash,
            low: bounds.iter().map(|b| b.0).collect(),
            high: bounds.iter().map(|b| b.1).collect(),
        })
    }

    pub fn from_parts(net: MlpParams, squash: bool, bounds: &[(f64, f64)]) -> Result<Self> {
        if net.output_dim() != 2 * bounds.len() {
            return Err(Error::shape(
                "policy net output",
                &[2 * bounds.len()],
                &[net.output_dim()],
            ));
        }
        Ok(GaussianPolicy {
            net,
            squash,
            low: bounds.iter().map(|b| b.0).collect(),
            high: bounds.iter().map(|b| b.1).collect(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn is_squashed(&self) -> bool {
        self.squash
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.low.iter().zip(&self.high).map(|(l, h)| (*l, *h)).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.net.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.tensors_mut()
    }

    fn scale_center(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        let center: Vec<f64> = self
            .low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect();
        (scale, center)
    }

    /// Mean and clamped log-std rows for `n` states.
    pub fn mean_logstd_batch(&self, states: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.net.forward_batch(states, n)?;
        let d = self.action_dim();
        let mut mean = Vec::with_capacity(n * d);
        let mut logstd = Vec::with_capacity(n * d);
        for row in out.chunks_exact(2 * d) {
            mean.extend_from_slice(&row[..d]);
            for v in &row[d..] {
                logstd.push(v.clamp(LOG_STD_MIN, LOG_STD_MAX));
            }
        }
        Ok((mean, logstd))
    }

    pub fn mean_logstd(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.mean_logstd_batch(state, 1)
    }

    /// Stochastic action, mapped into bounds (tanh for the squashed variant,
    /// clipping otherwise).
    pub fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let (mean, logstd) = self.mean_logstd(state)?;
        let (scale, center) = self.scale_center();
        let mut a = Vec::with_capacity(mean.len());
        for j in 0..mean.len() {
            let u = mean[j] + logstd[j].exp() * rng.sample::<f64, _>(StandardNormal);
            a.push(if self.squash {
                u.tanh() * scale[j] + center[j]
            } else {
                u.clamp(self.low[j], self.high[j])
            });
        }
        Ok(a)
    }

    /// Deterministic action: the squashed or clipped mean.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.mean_logstd(state)?;
        let (scale, center) = self.scale_center();
        Ok(mean
            .iter()
            .enumerate()
            .map(|(j, m)| {
                if self.squash {
                    m.tanh() * scale[j] + center[j]
                } else {
                    m.clamp(self.low[j], self.high[j])
                }
            })
            .collect())
    }

    /// Log-density of `action` at `state`. Squashed policies are evaluated
    /// in pre-squash space with the exact log-determinant correction.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let probs = self.log_prob_batch(state, action, 1)?;
        Ok(probs[0])
    }

    /// Named tensors under `prefix`: layers plus bounds and the squash flag.
    pub fn to_checkpoint(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.net.layers().iter().enumerate() {
            out.push((format!("{prefix}/w{i}"), l.weight.clone()));
            out.push((format!("{prefix}/b{i}"), l.bias.clone()));
        }
        let d = self.action_dim();
        out.push((
            format!("{prefix}/low"),
            Tensor::new(vec![d], self.low.clone()).unwrap(),
        ));
        out.push((
            format!("{prefix}/high"),
            Tensor::new(vec![d], self.high.clone()).unwrap(),
        ));
        out.push((
            format!("{prefix}/squash"),
            Tensor::scalar(if self.squash { 1.0 } else { 0.0 }),
        ));
        out
    }

    pub fn from_checkpoint(entries: &[(String, Tensor)], prefix: &str) -> Result<Self> {
        let net = crate::diffusion::mlp_from_entries(entries, prefix)?;
        let low = crate::checkpoint::find_tensor(entries, &format!("{prefix}/low"))?;
        let high = crate::checkpoint::find_tensor(entries, &format!("{prefix}/high"))?;
        let squash =
            crate::checkpoint::find_tensor(entries, &format!("{prefix}/squash"))?.data()[0] != 0.0;
        let bounds: Vec<(f64, f64)> = low
            .data()
            .iter()
            .zip(high.data())
            .map(|(l, h)| (*l, *h))
            .collect();
        Self::from_parts(net, squash, &bounds)
    }

    /// Row-wise log-densities for `n` (state, action) pairs.
    pub fn log_prob_batch(&self, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.action_dim();
        if actions.len() != n * d {
            return Err(Error::shape("log_prob actions", &[n, d], &[actions.len()]));
        }
        let (mean, logstd) = self.mean_logstd_batch(states, n)?;
        let (scale, center) = self.scale_center();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut lp = 0.0;
            for j in 0..d {
                let idx = i * d + j;
                let (m, l) = (mean[idx], logstd[idx]);
                let a = actions[idx];
                if self.squash {
                    let (u, corr) = presquash(a, scale[j], center[j]);
                    let z = (u - m) * (-l).exp();
                    lp += -0.5 * z * z - l - 0.5 * LN_2PI - corr;
                } else {
                    let z = (a - m) * (-l).exp();
                    lp += -0.5 * z * z - l - 0.5 * LN_2PI;
                }
            }
            out.push(lp);
        }
        Ok(out)
    }
}

/// Inverts the squash map and returns `(u, log|da/du|)` for one dimension.
fn presquash(a: f64, scale: f64, center: f64) -> (f64, f64) {
    let unit = ((a - center) / scale).clamp(-1.0 + ATANH_MARGIN, 1.0 - ATANH_MARGIN);
    let u = unit.atanh();
    // log(scale * (1 - tanh^2 u)) with 1 - tanh^2 u = 4 / (e^u + e^-u)^2,
    // in the stable form 2 (ln 2 - u - softplus(-2u)).
    let corr = scale.ln() + 2.0 * ((2f64).ln() - u - softplus(-2.0 * u));
    (u, corr)
}

/// Tape-side policy head: mean and clamped log-std nodes.
pub fn mean_logstd_tape(
    tape: &mut Tape,
    binding: &MlpBinding,
    states: NodeId,
    action_dim: usize,
) -> Result<(NodeId, NodeId)> {
    let out = binding.apply(tape, states)?;
    let mean = tape.slice_cols(out, 0, action_dim)?;
    let logstd_raw = tape.slice_cols(out, action_dim, 2 * action_dim)?;
    let logstd = tape.clamp(logstd_raw, LOG_STD_MIN, LOG_STD_MAX);
    Ok((mean, logstd))
}

/// Log-density of fixed actions under the bound policy network; `(n x 1)`.
/// For squashed policies the pre-squash points and the (parameter-free)
/// correction are computed outside the tape.
pub fn log_prob_tape(
    tape: &mut Tape,
    binding: &MlpBinding,
    policy: &GaussianPolicy,
    states: NodeId,
    actions: &[f64],
) -> Result<NodeId> {
    let d = policy.action_dim();
    let (n, _) = tape.dims(states);
    if actions.len() != n * d {
        return Err(Error::shape("log_prob_tape actions", &[n, d], &[actions.len()]));
    }
    let (mean, logstd) = mean_logstd_tape(tape, binding, states, d)?;
    let (target_u, corr): (Vec<f64>, f64) = if policy.squash {
        let (scale, center) = policy.scale_center();
        let mut us = Vec::with_capacity(actions.len());
        let mut corr_total = 0.0;
        for row in actions.chunks_exact(d) {
            for (j, a) in row.iter().enumerate() {
                let (u, c) = presquash(*a, scale[j], center[j]);
                us.push(u);
                corr_total += c;
            }
        }
        (us, corr_total)
    } else {
        (actions.to_vec(), 0.0)
    };
    let u_const = tape.constant(n, d, target_u)?;
    let diff = tape.sub(u_const, mean)?;
    let neg_logstd = tape.scale(logstd, -1.0);
    let inv_sigma = tape.exp(neg_logstd);
    let z = tape.mul(diff, inv_sigma)?;
    let zsq = tape.mul(z, z)?;
    let t = tape.scale(zsq, -0.5);
    let t = tape.sub(t, logstd)?;
    let t = tape.offset(t, -0.5 * LN_2PI);
    let per_row = tape.sum_rows(t);
    if policy.squash {
        // Spread the total correction evenly; only the sum is ever used.
        let c = tape.constant(n, 1, vec![corr / n as f64; n])?;
        tape.sub(per_row, c)
    } else {
        Ok(per_row)
    }
}

/// Reparameterized sample and its log-density for a squashed policy:
/// `a = tanh(mean + sigma * xi) * scale + center` with `xi` fixed.
/// Returns `(action_node (n x d), log_prob_node (n x 1))`.
pub fn rsample_logprob_tape(
    tape: &mut Tape,
    binding: &MlpBinding,
    policy: &GaussianPolicy,
    states: NodeId,
    xi: &[f64],
) -> Result<(NodeId, NodeId)> {
    if !policy.squash {
        return Err(Error::contract(
            "reparameterized sampling requires a squashed policy",
        ));
    }
    let d = policy.action_dim();
    let (n, _) = tape.dims(states);
    if xi.len() != n * d {
        return Err(Error::shape("rsample xi", &[n, d], &[xi.len()]));
    }
    let (mean, logstd) = mean_logstd_tape(tape, binding, states, d)?;
    let sigma = tape.exp(logstd);
    let xi_const = tape.constant(n, d, xi.to_vec())?;
    let noise = tape.mul(sigma, xi_const)?;
    let u = tape.add(mean, noise)?;
    let tanh_u = tape.tanh(u);
    let (scale, center) = policy.scale_center();
    let scale_row = tape.constant(1, d, scale.clone())?;
    let scale_mat = tape.repeat_rows(scale_row, n)?;
    let center_row = tape.constant(1, d, center)?;
    let center_mat = tape.repeat_rows(center_row, n)?;
    let scaled = tape.mul(tanh_u, scale_mat)?;
    let action = tape.add(scaled, center_mat)?;

    // Gaussian term at the sampled point: z = xi exactly, so only the
    // log-std carries parameters; -0.5 xi^2 - 0.5 ln(2 pi) is constant.
    let gauss_const: Vec<f64> = xi.iter().map(|x| -0.5 * x * x - 0.5 * LN_2PI).collect();
    let gc = tape.constant(n, d, gauss_const)?;
    let neg_logstd = tape.scale(logstd, -1.0);
    let gauss = tape.add(gc, neg_logstd)?;

    // Squash correction: ln(scale) + 2 (ln 2 - u - softplus(-2u)).
    let ln_scale: Vec<f64> = scale.iter().map(|s| s.ln() + 2.0 * (2f64).ln()).collect();
    let ls_row = tape.constant(1, d, ln_scale)?;
    let ls_mat = tape.repeat_rows(ls_row, n)?;
    let minus2u = tape.scale(u, -2.0);
    let sp = tape.softplus(minus2u);
    let u_plus_sp = tape.add(u, sp)?;
    let corr_inner = tape.scale(u_plus_sp, -2.0);
    let corr = tape.add(ls_mat, corr_inner)?;

    let per_dim = tape.sub(gauss, corr)?;
    let logp = tape.sum_rows(per_dim);
    Ok((action, logp))
}
