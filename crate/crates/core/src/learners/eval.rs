//! True-environment policy evaluation.

use crate::env::{NormStats, ToyEnv};
use crate::error::Result;
use crate::policy::GaussianPolicy;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Undiscounted mean return of the deterministic (mean) action over the
/// requested episodes. When the policy was trained on normalized states,
/// pass the raw-space statistics so observations are mapped before the
/// policy sees them. Deterministic given the RNG.
pub fn evaluate_policy(
    pi: &GaussianPolicy,
    env: &ToyEnv,
    norm: Option<&NormStats>,
    episodes: usize,
    max_steps: Option<usize>,
    rng: &mut Rng,
) -> Result<EvalStats> {
    let cap = max_steps.unwrap_or(env.episode_cap()).min(env.episode_cap());
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..cap {
            let obs = match norm {
                Some(stats) => stats.normalize_state(&s),
                None => s.clone(),
            };
            let a = pi.mean_action(&obs)?;
            let (s2, r, done) = env.step(&s, &a);
            total += r;
            if done {
                break;
            }
            s = s2;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes.max(1) as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / episodes.max(1) as f64;
    Ok(EvalStats {
        mean,
        std: var.sqrt(),
        returns,
    })
}
