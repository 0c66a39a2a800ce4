//! Conditional denoising diffusion world model.
//!
//! A noise-prediction network learns the one-step transition distribution
//! `P(s' | s, a)` with classifier-free conditioning: the condition `(s, a)`
//! is an input slot that is replaced by a learned null embedding for a
//! fraction of training samples, so the network can be queried both with and
//! without the condition. A separate head predicts reward and terminal
//! signal from `(s, a, s')`.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::adam::{AdamConfig, AdamState};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{apply_param_grads, Activation, MlpBinding, MlpParams};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{sigmoid, NodeId, Tape, Tensor};

/// Width of the sinusoidal embedding of the denoising step index.
pub const TIME_EMBED_DIM: usize = 16;

#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden_dim: usize,
    /// Hidden layers in the noise-prediction network.
    pub noise_depth: usize,
    /// Hidden layers in the reward/terminal head.
    pub reward_depth: usize,
    pub k_steps: usize,
    pub cosine_s: f64,
    pub guidance_weight: f64,
    pub cond_dropout: f64,
}

impl DiffusionConfig {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        DiffusionConfig {
            state_dim,
            action_dim,
            hidden_dim: 256,
            noise_depth: 3,
            reward_depth: 3,
            k_steps: 10,
            cosine_s: 1e-4,
            guidance_weight: 0.1,
            cond_dropout: 0.1,
        }
    }
}

/// Noise-prediction network, reward/terminal head, and their schedule.
#[derive(Debug, Clone)]
pub struct DiffusionWorldModel {
    pub state_dim: usize,
    pub action_dim: usize,
    pub guidance_weight: f64,
    pub cond_dropout: f64,
    pub(crate) noise_net: MlpParams,
    /// Learned stand-in for the condition slot when no condition is given.
    /// Learned rather than zeroed: all-zero vectors are legal normalized
    /// states and would be indistinguishable from data.
    pub(crate) null_embed: Tensor,
    pub(crate) reward_net: MlpParams,
    schedule: NoiseSchedule,
}

impl DiffusionWorldModel {
    pub fn new(cfg: &DiffusionConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.state_dim == 0 || cfg.action_dim == 0 {
            return Err(Error::contract("state and action dims must be positive"));
        }
        if !(0.0..=1.0).contains(&cfg.cond_dropout) {
            return Err(Error::contract("cond_dropout must lie in [0, 1]"));
        }
        let cond_dim = cfg.state_dim + cfg.action_dim;
        let in_dim = cfg.state_dim + cond_dim + TIME_EMBED_DIM;
        let mut widths = vec![in_dim];
        let mut acts = Vec::new();
        for _ in 0..cfg.noise_depth {
            widths.push(cfg.hidden_dim);
            acts.push(Activation::Relu);
        }
        widths.push(cfg.state_dim);
        acts.push(Activation::Identity);
        let noise_net = MlpParams::new(&widths, &acts, rng)?;

        let mut rwidths = vec![2 * cfg.state_dim + cfg.action_dim];
        let mut racts = Vec::new();
        for _ in 0..cfg.reward_depth {
            rwidths.push(cfg.hidden_dim);
            racts.push(Activation::Relu);
        }
        rwidths.push(2); // reward estimate, terminal logit
        racts.push(Activation::Identity);
        let reward_net = MlpParams::new(&rwidths, &racts, rng)?;

        let null_data: Vec<f64> = (0..cond_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let null_embed = Tensor::new(vec![1, cond_dim], null_data)?;

        Ok(DiffusionWorldModel {
            state_dim: cfg.state_dim,
            action_dim: cfg.action_dim,
            guidance_weight: cfg.guidance_weight,
            cond_dropout: cfg.cond_dropout,
            noise_net,
            null_embed,
            reward_net,
            schedule: NoiseSchedule::cosine(cfg.k_steps, cfg.cosine_s)?,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn k_steps(&self) -> usize {
        self.schedule.len()
    }

    pub fn noise_net(&self) -> &MlpParams {
        &self.noise_net
    }

    pub fn reward_net(&self) -> &MlpParams {
        &self.reward_net
    }

    pub fn null_embed(&self) -> &Tensor {
        &self.null_embed
    }

    /// Transition-network parameters in binding order.
    pub fn theta_tensors(&self) -> Vec<&Tensor> {
        let mut v = self.noise_net.tensors();
        v.push(&self.null_embed);
        v
    }

    pub fn theta_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.noise_net.tensors_mut();
        v.push(&mut self.null_embed);
        v
    }

    /// Reward/terminal-head parameters in binding order.
    pub fn eta_tensors(&self) -> Vec<&Tensor> {
        self.reward_net.tensors()
    }

    pub fn eta_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.reward_net.tensors_mut()
    }

    /// Forward noising: `sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps`.
    pub fn forward_noise(&self, x0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        forward_noise(x0, k, eps, &self.schedule)
    }

    /// Raw noise prediction for rows of `x` at a shared step `k`.
    /// `cond` is one `(s, a)` row per item, or `None` for the learned null
    /// condition.
    pub fn noise_pred_batch(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        k: usize,
        n: usize,
    ) -> Result<Vec<f64>> {
        self.schedule.beta(k)?; // range check
        let sd = self.state_dim;
        let cd = sd + self.action_dim;
        if x.len() != n * sd {
            return Err(Error::shape("noise_pred x", &[n, sd], &[x.len()]));
        }
        if let Some(c) = cond {
            if c.len() != n * cd {
                return Err(Error::shape("noise_pred cond", &[n, cd], &[c.len()]));
            }
        }
        let temb = sinusoidal_embedding(k);
        let mut input = Vec::with_capacity(n * (sd + cd + TIME_EMBED_DIM));
        for i in 0..n {
            input.extend_from_slice(&x[i * sd..(i + 1) * sd]);
            match cond {
                Some(c) => input.extend_from_slice(&c[i * cd..(i + 1) * cd]),
                None => input.extend_from_slice(self.null_embed.data()),
            }
            input.extend_from_slice(&temb);
        }
        self.noise_net.forward_batch(&input, n)
    }

    /// Classifier-free guided prediction:
    /// `eps(x, null, k) + w * (eps(x, cond, k) - eps(x, null, k))`.
    pub fn predict_noise_guided(
        &self,
        x_k: &[f64],
        state: &[f64],
        action: &[f64],
        k: usize,
    ) -> Result<Vec<f64>> {
        let mut cond = Vec::with_capacity(state.len() + action.len());
        cond.extend_from_slice(state);
        cond.extend_from_slice(action);
        self.predict_noise_guided_batch(x_k, &cond, k, 1)
    }

    /// Guided prediction for `n` rows sharing the step `k`.
    pub fn predict_noise_guided_batch(
        &self,
        x: &[f64],
        cond: &[f64],
        k: usize,
        n: usize,
    ) -> Result<Vec<f64>> {
        let uncond = self.noise_pred_batch(x, None, k, n)?;
        let conditioned = self.noise_pred_batch(x, Some(cond), k, n)?;
        let w = self.guidance_weight;
        Ok(uncond
            .iter()
            .zip(&conditioned)
            .map(|(u, c)| u + w * (c - u))
            .collect())
    }

    /// One reverse step `x_k -> x_{k-1}` given an external standard-normal
    /// draw. The variance term vanishes at `k = 1`, so the final step is
    /// deterministic regardless of the draw.
    pub fn denoise_step(
        &self,
        x_k: &[f64],
        state: &[f64],
        action: &[f64],
        k: usize,
        noise_draw: &[f64],
    ) -> Result<Vec<f64>> {
        let eps_hat = self.predict_noise_guided(x_k, state, action, k)?;
        let (mu, var) = denoise_mean_var(
            x_k,
            &eps_hat,
            self.schedule.alpha(k)?,
            self.schedule.beta(k)?,
            self.schedule.alpha_bar(k)?,
            self.schedule.alpha_bar_prev(k)?,
        );
        let sd = var.sqrt();
        Ok(mu
            .iter()
            .zip(noise_draw)
            .map(|(m, z)| m + sd * z)
            .collect())
    }

    /// Runs the full reverse chain from pure noise and returns the generated
    /// next state. Fails with the offending step index if any value turns
    /// non-finite.
    pub fn sample_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let sd = self.state_dim;
        let mut x: Vec<f64> = (0..sd)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for k in (1..=self.k_steps()).rev() {
            let draw: Vec<f64> = if k > 1 {
                (0..sd)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            } else {
                vec![0.0; sd]
            };
            x = self.denoise_step(&x, state, action, k, &draw)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Generation {
                    step: k,
                    reason: "non-finite state during reverse chain".into(),
                });
            }
        }
        Ok(x)
    }

    /// Vectorized reverse chain for `n` (state, action) rows at once.
    pub fn sample_next_state_batch(
        &self,
        states: &[f64],
        actions: &[f64],
        n: usize,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let sd = self.state_dim;
        let ad = self.action_dim;
        if states.len() != n * sd || actions.len() != n * ad {
            return Err(Error::shape(
                "sample_next_state_batch",
                &[n, sd + ad],
                &[states.len(), actions.len()],
            ));
        }
        let mut cond = Vec::with_capacity(n * (sd + ad));
        for i in 0..n {
            cond.extend_from_slice(&states[i * sd..(i + 1) * sd]);
            cond.extend_from_slice(&actions[i * ad..(i + 1) * ad]);
        }
        let mut x: Vec<f64> = (0..n * sd)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for k in (1..=self.k_steps()).rev() {
            let eps_hat = self.predict_noise_guided_batch(&x, &cond, k, n)?;
            let alpha = self.schedule.alpha(k)?;
            let beta = self.schedule.beta(k)?;
            let abar = self.schedule.alpha_bar(k)?;
            let abar_prev = self.schedule.alpha_bar_prev(k)?;
            let coef = beta / (1.0 - abar).sqrt();
            let inv_sqrt_alpha = 1.0 / alpha.sqrt();
            let sdv = (beta * (1.0 - abar_prev) / (1.0 - abar)).sqrt();
            for (xi, ei) in x.iter_mut().zip(&eps_hat) {
                let mu = inv_sqrt_alpha * (*xi - coef * ei);
                let z: f64 = if k > 1 { rng.sample(StandardNormal) } else { 0.0 };
                *xi = mu + sdv * z;
            }
            if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Generation {
                    step: k,
                    reason: format!("non-finite state in row {}", bad / sd),
                });
            }
        }
        Ok(x)
    }

    /// Reward estimate and terminal probability for one transition.
    pub fn predict_reward_done(
        &self,
        state: &[f64],
        action: &[f64],
        next_state: &[f64],
    ) -> Result<(f64, f64)> {
        let mut input = Vec::with_capacity(2 * self.state_dim + self.action_dim);
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        input.extend_from_slice(next_state);
        let out = self.reward_net.forward(&input)?;
        Ok((out[0], sigmoid(out[1])))
    }

    /// Named tensors for the checkpoint file: sections `theta`, `eta`,
    /// `schedule`, and `meta`. Network topology is rebuilt from tensor
    /// shapes on load (hidden layers ReLU, output identity).
    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.noise_net.layers().iter().enumerate() {
            out.push((format!("theta/w{i}"), l.weight.clone()));
            out.push((format!("theta/b{i}"), l.bias.clone()));
        }
        out.push(("theta/null".to_string(), self.null_embed.clone()));
        for (i, l) in self.reward_net.layers().iter().enumerate() {
            out.push((format!("eta/w{i}"), l.weight.clone()));
            out.push((format!("eta/b{i}"), l.bias.clone()));
        }
        out.push((
            "schedule/beta".to_string(),
            Tensor::new(vec![self.k_steps()], self.schedule.betas().to_vec()).unwrap(),
        ));
        out.push((
            "meta/config".to_string(),
            Tensor::new(
                vec![4],
                vec![
                    self.state_dim as f64,
                    self.action_dim as f64,
                    self.guidance_weight,
                    self.cond_dropout,
                ],
            )
            .unwrap(),
        ));
        out
    }

    pub fn from_checkpoint(entries: &[(String, Tensor)]) -> Result<Self> {
        let meta = crate::checkpoint::find_tensor(entries, "meta/config")?;
        if meta.len() != 4 {
            return Err(Error::Truncated("meta/config has wrong length".into()));
        }
        let state_dim = meta.data()[0] as usize;
        let action_dim = meta.data()[1] as usize;
        let noise_net = mlp_from_entries(entries, "theta")?;
        let reward_net = mlp_from_entries(entries, "eta")?;
        let null_embed = crate::checkpoint::find_tensor(entries, "theta/null")?.clone();
        let betas = crate::checkpoint::find_tensor(entries, "schedule/beta")?;
        let schedule = NoiseSchedule::from_betas(betas.data())?;
        if null_embed.len() != state_dim + action_dim {
            return Err(Error::shape(
                "theta/null",
                &[state_dim + action_dim],
                &[null_embed.len()],
            ));
        }
        Ok(DiffusionWorldModel {
            state_dim,
            action_dim,
            guidance_weight: meta.data()[2],
            cond_dropout: meta.data()[3],
            noise_net,
            null_embed,
            reward_net,
            schedule,
        })
    }
}

/// Rebuilds an MLP from `{prefix}/w{i}`, `{prefix}/b{i}` entries; hidden
/// layers ReLU, final layer identity.
pub(crate) fn mlp_from_entries(
    entries: &[(String, Tensor)],
    prefix: &str,
) -> Result<MlpParams> {
    let mut layers = Vec::new();
    let mut i = 0;
    while let Ok(w) = crate::checkpoint::find_tensor(entries, &format!("{prefix}/w{i}")) {
        let b = crate::checkpoint::find_tensor(entries, &format!("{prefix}/b{i}"))?;
        layers.push(crate::nn::Layer {
            weight: w.clone(),
            bias: b.clone(),
            activation: Activation::Relu, // fixed up below for the last layer
        });
        i += 1;
    }
    if layers.is_empty() {
        return Err(Error::Truncated(format!(
            "checkpoint has no layers under {prefix:?}"
        )));
    }
    let last = layers.len() - 1;
    layers[last].activation = Activation::Identity;
    MlpParams::from_layers(layers)
}

/// Sinusoidal features of the (1-based) step index.
pub fn sinusoidal_embedding(k: usize) -> [f64; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut out = [0.0; TIME_EMBED_DIM];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / (half as f64 - 1.0));
        out[i] = (k as f64 * freq).sin();
        out[half + i] = (k as f64 * freq).cos();
    }
    out
}

/// `sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps`.
pub fn forward_noise(x0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if eps.len() != x0.len() {
        return Err(Error::shape("forward_noise", &[x0.len()], &[eps.len()]));
    }
    let abar = sched.alpha_bar(k)?;
    let a = abar.sqrt();
    let b = (1.0 - abar).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Reverse-process mean and (isotropic) variance:
/// `mu = (x_k - beta/sqrt(1-alpha_bar) * eps_hat) / sqrt(alpha)`,
/// `var = beta * (1 - alpha_bar_prev) / (1 - alpha_bar)`.
pub fn denoise_mean_var(
    x_k: &[f64],
    eps_hat: &[f64],
    alpha: f64,
    beta: f64,
    alpha_bar: f64,
    alpha_bar_prev: f64,
) -> (Vec<f64>, f64) {
    let coef = beta / (1.0 - alpha_bar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mu = x_k
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| inv_sqrt_alpha * (x - coef * e))
        .collect();
    let var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar);
    (mu, var)
}

/// Noising draw for one training item.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    /// Denoising step, uniform over `1..=K`.
    pub k: usize,
    /// Standard-normal noise of state dimension.
    pub eps: Vec<f64>,
    /// Whether the condition is replaced by the null embedding.
    pub drop_cond: bool,
}

/// Samples one noising draw per batch item.
pub fn sample_draws(model: &DiffusionWorldModel, n: usize, rng: &mut Rng) -> Vec<NoiseDraw> {
    (0..n)
        .map(|_| NoiseDraw {
            k: rng.gen_range(1..=model.k_steps()),
            eps: (0..model.state_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
            drop_cond: rng.gen_range(0.0..1.0) < model.cond_dropout,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct DiffusionLossOptions {
    /// Include the binary cross-entropy term on the terminal logit.
    pub include_terminal: bool,
}

impl Default for DiffusionLossOptions {
    fn default() -> Self {
        DiffusionLossOptions {
            include_terminal: true,
        }
    }
}

/// Per-item weighted diffusion loss
/// `(1/N) sum_i w_i (|eps_i - eps_pred_i|^2 + (r_i - r_pred_i)^2 [+ bce_i])`
/// with the draws supplied by the caller, so tests can pin exact draws.
pub fn diffusion_loss_with_draws(
    model: &DiffusionWorldModel,
    batch: &Batch,
    weights: &[f64],
    draws: &[NoiseDraw],
    opts: DiffusionLossOptions,
) -> Result<f64> {
    let (tape, loss) = build_loss_tape(model, batch, weights, draws, opts, false)?;
    Ok(tape.value(loss)[0])
}

/// Weighted diffusion loss with draws sampled from `rng`.
pub fn diffusion_loss(
    model: &DiffusionWorldModel,
    batch: &Batch,
    weights: &[f64],
    rng: &mut Rng,
    opts: DiffusionLossOptions,
) -> Result<f64> {
    let draws = sample_draws(model, batch.len, rng);
    diffusion_loss_with_draws(model, batch, weights, &draws, opts)
}

/// Adam states for the two parameter groups of the world model.
#[derive(Debug, Clone)]
pub struct DiffusionOptimizers {
    pub theta: AdamState,
    pub eta: AdamState,
}

impl DiffusionOptimizers {
    pub fn new(model: &DiffusionWorldModel, cfg: AdamConfig) -> Self {
        DiffusionOptimizers {
            theta: AdamState::new(cfg, &model.theta_tensors()),
            eta: AdamState::new(cfg, &model.eta_tensors()),
        }
    }
}

/// One weighted gradient step on both parameter groups. Returns the loss
/// before the update.
pub fn diffusion_train_step(
    model: &mut DiffusionWorldModel,
    opt: &mut DiffusionOptimizers,
    batch: &Batch,
    weights: &[f64],
    draws: &[NoiseDraw],
    opts: DiffusionLossOptions,
) -> Result<f64> {
    let (mut tape, loss) = build_loss_tape(model, batch, weights, draws, opts, true)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("diffusion loss".into()));
    }
    let grads = tape.backward(loss)?;
    let n_theta = model.theta_tensors().len();
    let mut theta_grads = grads;
    let eta_grads = theta_grads.split_off(n_theta);
    // The null embedding only receives gradient when some draw dropped its
    // condition; fill zeros so the optimizer contract stays strict.
    {
        let mut theta = model.theta_tensors_mut();
        apply_param_grads(&mut theta, theta_grads, true)?;
        opt.theta.step(&mut theta)?;
    }
    {
        let mut eta = model.eta_tensors_mut();
        apply_param_grads(&mut eta, eta_grads, true)?;
        opt.eta.step(&mut eta)?;
    }
    Ok(value)
}

fn build_loss_tape(
    model: &DiffusionWorldModel,
    batch: &Batch,
    weights: &[f64],
    draws: &[NoiseDraw],
    opts: DiffusionLossOptions,
    trainable: bool,
) -> Result<(Tape, NodeId)> {
    let n = batch.len;
    if n == 0 {
        return Err(Error::contract("diffusion loss on an empty batch"));
    }
    if weights.len() != n || draws.len() != n {
        return Err(Error::contract(format!(
            "batch of {n} with {} weights and {} draws",
            weights.len(),
            draws.len()
        )));
    }
    if batch.state_dim != model.state_dim || batch.action_dim != model.action_dim {
        return Err(Error::shape(
            "diffusion batch dims",
            &[model.state_dim, model.action_dim],
            &[batch.state_dim, batch.action_dim],
        ));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract(format!(
            "weight {i} is {} (must be finite and >= 0)",
            weights[i]
        )));
    }

    let mut tape = Tape::new();
    let (noise_binding, null_node, reward_binding) = if trainable {
        let nb = MlpBinding::trainable(&mut tape, &model.noise_net);
        let nullp = tape.param(&model.null_embed);
        let rb = MlpBinding::trainable(&mut tape, &model.reward_net);
        (nb, nullp, rb)
    } else {
        let nb = MlpBinding::frozen(&mut tape, &model.noise_net)?;
        let nullp =
            tape.constant(1, model.null_embed.len(), model.null_embed.data().to_vec())?;
        let rb = MlpBinding::frozen(&mut tape, &model.reward_net)?;
        (nb, nullp, rb)
    };

    let sd = model.state_dim;
    let ad = model.action_dim;
    let cd = sd + ad;

    // Reward/terminal part over the full batch.
    let mut rt_input = Vec::with_capacity(n * (2 * sd + ad));
    for i in 0..n {
        rt_input.extend_from_slice(batch.state(i));
        rt_input.extend_from_slice(batch.action(i));
        rt_input.extend_from_slice(batch.next_state(i));
    }
    let rt_in = tape.constant(n, 2 * sd + ad, rt_input)?;
    let rt_out = reward_binding.apply(&mut tape, rt_in)?;
    let r_pred = tape.slice_cols(rt_out, 0, 1)?;
    let r_target = tape.constant(n, 1, batch.rewards.clone())?;
    let r_diff = tape.sub(r_pred, r_target)?;
    let r_loss = tape.mul(r_diff, r_diff)?;
    let per_item = if opts.include_terminal {
        let logit = tape.slice_cols(rt_out, 1, 2)?;
        let y = tape.constant(n, 1, batch.dones.clone())?;
        let sp = tape.softplus(logit);
        let zy = tape.mul(logit, y)?;
        let bce = tape.sub(sp, zy)?;
        tape.add(r_loss, bce)?
    } else {
        r_loss
    };

    // Noise part, split into conditioned / unconditioned groups.
    let cond_idx: Vec<usize> = (0..n).filter(|i| !draws[*i].drop_cond).collect();
    let null_idx: Vec<usize> = (0..n).filter(|i| draws[*i].drop_cond).collect();
    let mut noise_per_group: Vec<Option<NodeId>> = vec![None; 2];
    for (g, idx) in [&cond_idx, &null_idx].into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let m = idx.len();
        let mut x_rows = Vec::with_capacity(m * sd);
        let mut temb_rows = Vec::with_capacity(m * TIME_EMBED_DIM);
        let mut eps_rows = Vec::with_capacity(m * sd);
        let mut cond_rows = Vec::with_capacity(m * cd);
        for &i in idx {
            let d = &draws[i];
            let noised = forward_noise(batch.next_state(i), d.k, &d.eps, &model.schedule)?;
            x_rows.extend_from_slice(&noised);
            temb_rows.extend_from_slice(&sinusoidal_embedding(d.k));
            eps_rows.extend_from_slice(&d.eps);
            if g == 0 {
                cond_rows.extend_from_slice(batch.state(i));
                cond_rows.extend_from_slice(batch.action(i));
            }
        }
        let x = tape.constant(m, sd, x_rows)?;
        let cond = if g == 0 {
            tape.constant(m, cd, cond_rows)?
        } else {
            tape.repeat_rows(null_node, m)?
        };
        let temb = tape.constant(m, TIME_EMBED_DIM, temb_rows)?;
        let xc = tape.concat_cols(x, cond)?;
        let input = tape.concat_cols(xc, temb)?;
        let pred = noise_binding.apply(&mut tape, input)?;
        let eps_t = tape.constant(m, sd, eps_rows)?;
        let diff = tape.sub(pred, eps_t)?;
        let sq = tape.mul(diff, diff)?;
        noise_per_group[g] = Some(tape.sum_rows(sq));
    }

    // Weighted total: (1/N) sum_i w_i * l_i, assembled group by group.
    let w_all = tape.constant(n, 1, weights.to_vec())?;
    let weighted_rt = tape.scale_rows(per_item, w_all)?;
    let mut total = tape.sum_all(weighted_rt);
    for (g, idx) in [&cond_idx, &null_idx].into_iter().enumerate() {
        if let Some(nl) = noise_per_group[g] {
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let w_node = tape.constant(idx.len(), 1, w)?;
            let weighted = tape.scale_rows(nl, w_node)?;
            let s = tape.sum_all(weighted);
            total = tape.add(total, s)?;
        }
    }
    let loss = tape.scale(total, 1.0 / n as f64);
    Ok((tape, loss))
}
