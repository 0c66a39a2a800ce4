//! Noise schedules for the denoising diffusion process.
//!
//! Steps are 1-based: `k` ranges over `1..=K`, and the cumulative product
//! at `k = 0` is defined to be 1.

use crate::error::{Error, Result};

/// Highest beta allowed; keeps the reverse-process mean finite at the last
/// steps.
pub const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step betas. Alphas and their cumulative
    /// products are derived exactly (`alpha = 1 - beta`, running product).
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::contract("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b <= BETA_MAX)) {
            return Err(Error::contract(format!(
                "betas must lie in (0, {BETA_MAX}]"
            )));
        }
        let alpha: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule {
            beta: betas.to_vec(),
            alpha,
            alpha_bar,
        })
    }

    /// Cosine schedule: `alpha_bar(k) = f(k) / f(0)` with
    /// `f(k) = cos^2(((k/K + s) / (1 + s)) * pi/2)`, betas derived as
    /// `1 - alpha_bar(k)/alpha_bar(k-1)` and clamped into (0, 0.999].
    /// The stored cumulative products are rebuilt from the clamped betas so
    /// the running-product identity holds exactly.
    pub fn cosine(k_steps: usize, s: f64) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::contract("cosine schedule requires K >= 1"));
        }
        if !(s > 0.0) {
            return Err(Error::contract("cosine schedule requires s > 0"));
        }
        let f = |k: usize| -> f64 {
            let t = (k as f64 / k_steps as f64 + s) / (1.0 + s);
            (t * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let mut betas = Vec::with_capacity(k_steps);
        let mut prev = 1.0;
        for k in 1..=k_steps {
            let ab = f(k) / f0;
            let beta = (1.0 - ab / prev).min(BETA_MAX);
            if !(beta > 0.0) {
                return Err(Error::contract(format!(
                    "cosine schedule produced non-positive beta at step {k}"
                )));
            }
            betas.push(beta);
            prev = ab;
        }
        Self::from_betas(&betas)
    }

    /// Number of denoising steps K.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.len() {
            return Err(Error::contract(format!(
                "step {k} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.beta[k - 1])
    }

    pub fn alpha(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.alpha[k - 1])
    }

    pub fn alpha_bar(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.alpha_bar[k - 1])
    }

    /// Cumulative product one step earlier; 1 at `k = 1`.
    pub fn alpha_bar_prev(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(if k == 1 { 1.0 } else { self.alpha_bar[k - 2] })
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}
