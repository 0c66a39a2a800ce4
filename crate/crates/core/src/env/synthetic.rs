//! Synthetic benchmark data with a known conditional law, used to measure
//! sampler fidelity and model adaptation against ground truth.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{OfflineDataset, Tier};
use crate::data::Transition;
use crate::error::Result;
use crate::rng::Rng;

/// One-dimensional linear-Gaussian transition
/// `s' = coef_s * s + coef_a * a + Normal(0, noise_std^2)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussian {
    pub coef_s: f64,
    pub coef_a: f64,
    pub noise_std: f64,
}

impl Default for LinearGaussian {
    fn default() -> Self {
        LinearGaussian {
            coef_s: 0.9,
            coef_a: 0.1,
            noise_std: 0.1,
        }
    }
}

impl LinearGaussian {
    pub fn true_mean(&self, s: f64, a: f64) -> f64 {
        self.coef_s * s + self.coef_a * a
    }

    pub fn sample(&self, s: f64, a: f64, rng: &mut Rng) -> f64 {
        self.true_mean(s, a) + self.noise_std * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Dataset with states uniform over `s_range` and actions drawn by the
/// caller's sampler. Rewards are `-(s^2)` (a learnable function of state);
/// transitions never terminate.
pub fn linear_gaussian_dataset(
    law: &LinearGaussian,
    n: usize,
    s_range: (f64, f64),
    mut action_sampler: impl FnMut(&mut Rng) -> f64,
    rng: &mut Rng,
) -> Result<OfflineDataset> {
    let transitions: Vec<Transition> = (0..n)
        .map(|_| {
            let s = rng.gen_range(s_range.0..s_range.1);
            let a = action_sampler(rng);
            let s2 = law.sample(s, a, rng);
            Transition {
                state: vec![s],
                action: vec![a],
                reward: -(s * s),
                next_state: vec![s2],
                done: false,
            }
        })
        .collect();
    OfflineDataset::from_transitions(
        "linear-gaussian-1d",
        "synthetic linear-gaussian law",
        Tier::Random,
        1,
        1,
        &transitions,
    )
}
